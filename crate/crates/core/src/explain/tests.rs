use super::*;
use crate::neural::Tensor;

fn infos() -> Vec<FeatureInfo> {
    let mk = |id: &str, group| FeatureInfo {
        id: id.into(),
        group,
        subgroup: id.into(),
    };
    vec![
        mk("a", FeatureGroup::Syntactic),
        mk("b", FeatureGroup::Ngram),
        mk("c", FeatureGroup::Lexical),
        mk("d", FeatureGroup::Ngram),
    ]
}

fn input() -> ModelInput {
    ModelInput {
        contour: Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap(),
        extras: (1..=10).map(f64::from).collect(),
    }
}

#[test]
fn identity_and_zero_masks() {
    let a = GroupAssignment::new(&infos(), &FeatureGroup::ALL).unwrap();
    let x = input();
    assert_eq!(a.perturb(&x, &GroupMask::all_on(7)).unwrap(), x);
    let z = a.perturb(&x, &GroupMask::from_code(0, 7)).unwrap();
    assert!(z.contour.data().iter().all(|&v| v == 0.0));
    assert!(z.extras[..7].iter().all(|&v| v == 0.0));
    // topic one-hot is not part of any group
    assert_eq!(&z.extras[7..], &x.extras[7..]);
}

#[test]
fn ngram_off_zeros_only_ngram_columns() {
    let a = GroupAssignment::new(&infos(), &FeatureGroup::ALL).unwrap();
    let g = FeatureGroup::ALL
        .iter()
        .position(|&g| g == FeatureGroup::Ngram)
        .unwrap();
    let mut mask = GroupMask::all_on(7);
    mask.bits[g] = false;
    let x = input();
    let y = a.perturb(&x, &mask).unwrap();
    assert_eq!(y.contour.data(), &[1.0, 0.0, 3.0, 0.0, 5.0, 0.0, 7.0, 0.0]);
    assert_eq!(y.extras, x.extras);
}

#[test]
fn unassigned_column_is_rejected() {
    let r = GroupAssignment::new(&infos(), &[FeatureGroup::Syntactic, FeatureGroup::Ngram]);
    assert!(matches!(r, Err(Error::UnassignedFeature(2))));
}

#[test]
fn kernel_values() {
    assert!((kernel_width(7) - 1.98431).abs() < 1e-5);
    assert_eq!(kernel_weight(&GroupMask::all_on(7), 7), 1.0);
    let mut m = GroupMask::all_on(7);
    m.bits[3] = false;
    let expected = (-1.0f64 / 3.9375).exp();
    assert!((kernel_weight(&m, 7) - expected).abs() < 1e-15);
    // exp(-1/3.9375) evaluated separately: 0.7757164275739282
    assert!((kernel_weight(&m, 7) - 0.775_716_427_573_928_2).abs() < 1e-12);
    let mut prev = 2.0;
    for k in 0..=7u64 {
        let w = kernel_weight(&GroupMask::from_code((1 << (7 - k)) - 1, 7), 7);
        assert!(w < prev);
        prev = w;
    }
}

#[test]
fn mask_linear_black_box_is_recovered() {
    let cfg = ExplainConfig::default();
    let e = explain_black_box("x", 7, &cfg, |ms| {
        Ok(ms
            .iter()
            .map(|m| 2.0 * m.as_f64()[0] + 3.0 * m.as_f64()[3])
            .collect())
    })
    .unwrap();
    let want = [2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0];
    for (c, w) in e.coefficients.iter().zip(want) {
        assert!((c - w).abs() < 1e-8);
    }
    assert!(e.intercept.abs() < 1e-8);
    assert!(!e.singular);
    assert_eq!(e.queries.len(), 128);
}

#[test]
fn constant_black_box() {
    let e = explain_black_box("x", 7, &ExplainConfig::default(), |ms| {
        Ok(vec![0.37; ms.len()])
    })
    .unwrap();
    assert!(e.coefficients.iter().all(|c| c.abs() < 1e-12));
    assert!((e.intercept - 0.37).abs() < 1e-12);
}

#[test]
fn two_group_regression_matches_normal_equations() {
    // rows (1, z1, z2) for masks 00, 10, 01, 11
    let x = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 1.0],
    ];
    let y = [0.1, 0.7, 0.4, 0.2];
    let w = [0.5, 2.0, 1.0, 3.0];
    let fit = weighted_least_squares(&x, &y, &w).unwrap();
    // normal equations M beta = v with M = Σ w a a^T, v = Σ w y a
    let mut m = [[0.0f64; 3]; 3];
    let mut v = [0.0f64; 3];
    for i in 0..4 {
        let a = [1.0, x[i][0], x[i][1]];
        for r in 0..3 {
            v[r] += w[i] * y[i] * a[r];
            for c in 0..3 {
                m[r][c] += w[i] * a[r] * a[c];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d0 = det(&m);
    let beta: Vec<f64> = (0..3)
        .map(|k| {
            let mut mk = m;
            for r in 0..3 {
                mk[r][k] = v[r];
            }
            det(&mk) / d0
        })
        .collect();
    assert!((fit.intercept - beta[0]).abs() < 1e-10);
    assert!((fit.coefficients[0] - beta[1]).abs() < 1e-10);
    assert!((fit.coefficients[1] - beta[2]).abs() < 1e-10);
}

#[test]
fn rank_deficient_design_is_flagged() {
    // second column duplicates the first
    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]];
    let fit = weighted_least_squares(&x, &[0.0, 2.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
    assert!(fit.singular);
    assert!((fit.coefficients[0] - 1.0).abs() < 1e-10);
    assert!((fit.coefficients[1] - 1.0).abs() < 1e-10);
}

#[test]
fn importance_formula() {
    let w = ImportanceMatrix {
        groups: vec!["a".into(), "b".into()],
        sample_ids: vec!["1".into(), "2".into()],
        rows: vec![vec![1.0, 0.0], vec![-4.0, 0.0]],
    };
    let i = global_importance(&w).unwrap();
    assert!((i[0] - 5f64.sqrt()).abs() < 1e-15);
    assert_eq!(i[1], 0.0);
    let ranked = rank_groups("funny", &w.groups, &i);
    assert_eq!(ranked[0].group, "a");
    assert_eq!(ranked[1].rank, 2);
    assert!(global_importance(&ImportanceMatrix {
        groups: vec![],
        sample_ids: vec![],
        rows: vec![]
    })
    .is_err());
}

#[test]
fn sampled_masks_for_many_groups() {
    let cfg = ExplainConfig {
        samples: 300,
        ..Default::default()
    };
    let ms = masks(14, &cfg).unwrap();
    assert_eq!(ms.len(), 300);
    assert_eq!(ms[0], GroupMask::all_on(14));
    assert_eq!(masks(14, &cfg).unwrap(), ms);
    assert_eq!(masks(3, &cfg).unwrap().len(), 8);
}

#[test]
fn importance_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("importance.csv");
    let rows = rank_groups("funny", &["x".to_string(), "y".to_string()], &[0.3, 0.9]);
    write_importance_csv(&p, &rows).unwrap();
    assert_eq!(read_importance_csv(&p).unwrap(), rows);
}
