mod common;

use common::{random_dataset, random_instance, rel_err};
use dnlfa::data::{load_triples, SparseDataset, Triple};
use dnlfa::eval::rmse_with;
use dnlfa::model::{Hyperparameters, Model, Variant};
use dnlfa::oracle::{self, DenseState, Family};
use dnlfa::trainer::{
    predictions, update_g_phase, update_h_phase, update_masks, update_x_phase, update_y_phase,
    Trainer, DEFAULT_GUARD,
};
use proptest::prelude::*;

#[test]
fn objective_matches_dense_oracle() {
    for seed in 0..20 {
        let ds = random_dataset(9, 7, 0.4, 5.0, seed);
        let inst = random_instance(ds, 3, 2, 0.07, (0.0, 1.0), seed);
        let sparse = inst.model.objective(&inst.ds).unwrap();
        let dense = oracle::dense_objective(&DenseState::from_model(&inst.model, &inst.ds)).unwrap();
        assert!(rel_err(sparse, dense) <= 1e-12, "seed {seed}: {sparse} vs {dense}");
    }
}

#[test]
fn objective_transpose_symmetry_is_exact() {
    let ds = random_dataset(8, 11, 0.3, 3.0, 4);
    let inst = random_instance(ds, 4, 2, 0.2, (0.0, 1.0), 4);
    let mut model = inst.model;
    model.biases.as_mut().unwrap().i[[2, 1]] = 0;
    let a = model.objective(&inst.ds).unwrap();
    let b = model.transposed().objective(&inst.ds.transpose()).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn y_phase_is_x_phase_on_transpose() {
    let ds = random_dataset(10, 6, 0.35, 4.0, 8);
    let inst = random_instance(ds, 3, 2, 0.1, (0.05, 1.0), 8);
    let mut direct = inst.model.clone();
    update_y_phase(&mut direct, &inst.ds, DEFAULT_GUARD);
    let mut mirrored = inst.model.transposed();
    update_x_phase(&mut mirrored, &inst.ds.transpose(), DEFAULT_GUARD);
    assert_eq!(direct.factors.y, mirrored.factors.x);

    let mut direct = inst.model.clone();
    update_h_phase(&mut direct, &inst.ds, DEFAULT_GUARD);
    let mut mirrored = inst.model.transposed();
    update_g_phase(&mut mirrored, &inst.ds.transpose(), DEFAULT_GUARD);
    assert_eq!(direct.biases.unwrap().h, mirrored.biases.unwrap().g);
}

#[test]
fn inactive_bias_agd_step_matches_zeroing() {
    // with i = 0 the canceling step lands on zero up to rounding in the
    // coordinate's own magnitude
    let ds = random_dataset(6, 5, 0.6, 3.0, 2);
    let mut inst = random_instance(ds, 2, 2, 0.1, (0.1, 1.0), 2);
    let b = inst.model.biases.as_mut().unwrap();
    b.i[[0, 0]] = 0;
    b.i[[3, 1]] = 0;
    b.j[[2, 0]] = 0;
    let before = DenseState::from_model(&inst.model, &inst.ds);
    let mut trained = inst.model.clone();
    update_g_phase(&mut trained, &inst.ds, 0.0);
    update_h_phase(&mut trained, &inst.ds, 0.0);
    let after_g = oracle::agd_phase(&before, Family::G, &oracle::canceling_rates(&before, Family::G)).unwrap();
    let tb = trained.biases.as_ref().unwrap();
    for m in 0..6 {
        for k in 0..2 {
            let scale = before.g[m][k].max(tb.g[[m, k]]);
            assert!((after_g.g[m][k] - tb.g[[m, k]]).abs() <= 1e-12 * scale);
        }
    }
    assert_eq!(tb.g[[0, 0]], 0.0);
}

#[test]
fn load_write_round_trip() {
    let text = "# ratings\n10 3 4.5\n7 3 1\n10 8 2.25\n-4 99 0\n";
    let ds = load_triples(text.as_bytes()).unwrap();
    let mut buf = Vec::new();
    ds.write_triples(&mut buf).unwrap();
    assert_eq!(load_triples(&buf[..]).unwrap(), ds);
}

#[test]
fn index_views_hold_the_same_entries() {
    let ds = random_dataset(17, 13, 0.25, 2.0, 3);
    let mut from_rows: Vec<(u32, u32, u64)> = (0..ds.num_rows())
        .flat_map(|m| ds.row(m).iter().map(move |s| (m as u32, s.other, s.entry)))
        .map(|(m, n, e)| (m, n, ds.entries()[e as usize].value.to_bits()))
        .collect();
    let mut from_cols: Vec<(u32, u32, u64)> = (0..ds.num_cols())
        .flat_map(|n| ds.col(n).iter().map(move |s| (s.other, n as u32, s.entry)))
        .map(|(m, n, e)| (m, n, ds.entries()[e as usize].value.to_bits()))
        .collect();
    let mut direct: Vec<(u32, u32, u64)> = ds
        .entries()
        .iter()
        .map(|t| (t.row, t.col, t.value.to_bits()))
        .collect();
    from_rows.sort_unstable();
    from_cols.sort_unstable();
    direct.sort_unstable();
    assert_eq!(from_rows, direct);
    assert_eq!(from_cols, direct);
}

#[test]
fn training_is_independent_of_thread_count() {
    let ds = random_dataset(40, 30, 0.2, 5.0, 12);
    let hp = Hyperparameters {
        d1: 4,
        d2: 2,
        max_iters: 40,
        tol: 0.0,
        threshold_e: 0.05,
        ..Hyperparameters::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| dnlfa::train(&hp, &ds, None, 3).unwrap().0)
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one.to_bytes(), run(7).to_bytes());
}

#[test]
fn scale_consistency_of_scoring() {
    let ds = random_dataset(12, 9, 0.4, 5.0, 6);
    let predict = |m: usize, n: usize| ((m * 7 + n * 3) % 5) as f64 * 0.5;
    let base = rmse_with(&ds, predict).unwrap();
    for alpha in [0.0, 0.5, 3.0] {
        let scaled = SparseDataset::from_triples(
            ds.num_rows(),
            ds.num_cols(),
            ds.entries()
                .iter()
                .map(|t| Triple { value: alpha * t.value, ..*t })
                .collect(),
        );
        let got = rmse_with(&scaled, |m, n| alpha * predict(m, n)).unwrap();
        assert!((got - alpha * base).abs() <= 1e-12 * base.max(1.0));
    }
}

#[test]
fn rmse_zero_iff_exact() {
    let inst = random_instance(random_dataset(6, 6, 0.5, 1.0, 1), 2, 1, 0.1, (0.1, 1.0), 1);
    let preds = predictions(&inst.model, &inst.ds);
    let exact = SparseDataset::from_triples(
        6,
        6,
        inst.ds
            .entries()
            .iter()
            .zip(&preds)
            .map(|(t, &p)| Triple { value: p, ..*t })
            .collect(),
    );
    assert_eq!(dnlfa::rmse(&inst.model, &exact).unwrap(), 0.0);
    assert!(dnlfa::rmse(&inst.model, &inst.ds).unwrap() > 0.0);
}

fn state_strategy() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 1usize..4, 1usize..3, 0.01f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn phases_preserve_nonnegativity_and_masks_never_reactivate(
        (seed, d1, d2, lambda) in state_strategy(),
        e in 0.0f64..0.6,
    ) {
        let ds = random_dataset(9, 8, 0.35, 4.0, seed);
        let mut model = random_instance(ds.clone(), d1, d2, lambda, (0.0, 1.0), seed).model;
        let mut prev = model.active_counts();
        for _ in 0..6 {
            update_x_phase(&mut model, &ds, DEFAULT_GUARD);
            update_y_phase(&mut model, &ds, DEFAULT_GUARD);
            update_g_phase(&mut model, &ds, DEFAULT_GUARD);
            update_h_phase(&mut model, &ds, DEFAULT_GUARD);
            let before = model.biases.clone().unwrap();
            update_masks(&mut model, e);
            let b = model.biases.as_ref().unwrap();
            prop_assert!(model.factors.x.iter().chain(model.factors.y.iter()).all(|&v| v >= 0.0));
            prop_assert!(b.g.iter().chain(b.h.iter()).all(|&v| v >= 0.0));
            for (old, new) in before.i.iter().chain(before.j.iter()).zip(b.i.iter().chain(b.j.iter())) {
                prop_assert!(*new <= *old);
            }
            for (mask, bias) in b.i.iter().zip(b.g.iter()).chain(b.j.iter().zip(b.h.iter())) {
                prop_assert!(*mask == 1 || *bias == 0.0);
            }
            let now = model.active_counts();
            prop_assert!(now.0 <= prev.0 && now.1 <= prev.1);
            prev = now;
        }
    }

    #[test]
    fn predict_is_linear_in_row_factor(
        (seed, d1, d2, _lambda) in state_strategy(),
        alpha in 0.0f64..4.0,
    ) {
        let inst = random_instance(random_dataset(4, 5, 0.5, 1.0, seed), d1, d2, 0.1, (0.0, 1.0), seed);
        let mut bias_only = inst.model.clone();
        bias_only.factors.x.fill(0.0);
        let mut scaled = inst.model.clone();
        scaled.factors.x.row_mut(2).mapv_inplace(|v| v * alpha);
        for n in 0..5 {
            let bias = bias_only.predict(2, n).unwrap();
            let factor = inst.model.predict(2, n).unwrap() - bias;
            let got = scaled.predict(2, n).unwrap();
            prop_assert!((got - (alpha * factor + bias)).abs() <= 1e-12 * (1.0 + got.abs()));
        }
    }

    #[test]
    fn model_file_round_trip_is_bit_exact(
        (seed, d1, d2, lambda) in state_strategy(),
        nlfa in any::<bool>(),
    ) {
        let d2 = if nlfa { 0 } else { d2 };
        let mut model = random_instance(random_dataset(5, 4, 0.5, 1.0, seed), d1, d2, lambda, (0.0, 1e3), seed).model;
        if let Some(b) = model.biases.as_mut() {
            b.i[[1, 0]] = 0;
            b.g[[1, 0]] = 0.0;
        }
        let back = Model::read(&model.to_bytes()[..]).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(back.to_bytes(), model.to_bytes());
    }

    #[test]
    fn objective_is_nonnegative((seed, d1, d2, lambda) in state_strategy()) {
        let inst = random_instance(random_dataset(6, 6, 0.4, 3.0, seed), d1, d2, lambda, (0.0, 1.0), seed);
        prop_assert!(inst.model.objective(&inst.ds).unwrap() >= 0.0);
    }
}

#[test]
fn dnlfa_tiny_threshold_tracks_ebnl() {
    let ds = random_dataset(15, 12, 0.3, 4.0, 21);
    let base = Hyperparameters {
        d1: 3,
        d2: 2,
        max_iters: 30,
        tol: 0.0,
        ..Hyperparameters::default()
    };
    let ebnl = Hyperparameters { variant: Variant::Ebnl, ..base.clone() };
    let dnlfa = Hyperparameters { variant: Variant::Dnlfa, threshold_e: f64::MIN_POSITIVE, ..base };
    let mut a = Trainer::new(&ebnl, &ds, None, 5).unwrap();
    let mut b = Trainer::new(&dnlfa, &ds, None, 5).unwrap();
    while !a.is_done() {
        let (ra, rb) = (a.step().clone(), b.step().clone());
        assert_eq!(ra.objective.to_bits(), rb.objective.to_bits());
        assert_eq!((ra.active_i, ra.active_j), (rb.active_i, rb.active_j));
        assert_eq!(a.model().factors, b.model().factors);
        assert_eq!(a.model().biases, b.model().biases);
    }
}
