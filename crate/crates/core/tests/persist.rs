use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vineqr::copula::{Family, FamilySpec, PairCopula};
use vineqr::marginals::MarginalModel;
use vineqr::persist::{decode_f64s, encode_f64s, ModelFile, FORMAT_VERSION};
use vineqr::regression::{MarginSpec, VineQuantileRegression};
use vineqr::select::{SelectionConfig, Strategy};
use vineqr::simgen::{gen_setting, SettingId, SettingSpec};
use vineqr::vine::{FittedVine, VineKind, VineOrder};

fn names(p: usize) -> Vec<String> {
    vineqr::simgen::column_names(p)
}

fn fitted() -> (VineQuantileRegression, Vec<Vec<f64>>) {
    let data = gen_setting(&SettingSpec::new(SettingId::B, 0.0, 150, 3)).unwrap();
    let mut cfg = SelectionConfig::new(VineKind::D, Strategy::TwoStep, 2);
    cfg.max_predictors = Some(3);
    let model = VineQuantileRegression::fit(&data.train, 0, &cfg, MarginSpec::Kde).unwrap();
    (model, data.train)
}

fn random_rows(train: &[Vec<f64>], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train
        .iter()
        .map(|c| {
            let lo = c.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
            let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
            (0..n).map(|_| rng.random_range(lo..hi)).collect()
        })
        .collect()
}

#[test]
fn payload_roundtrip_is_exact() {
    let v = [0.1, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0, 1e300, f64::EPSILON];
    let back = decode_f64s(&encode_f64s(&v)).unwrap();
    assert_eq!(
        v.map(f64::to_bits).to_vec(),
        back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert!(decode_f64s("AAAA").is_err());
    assert!(decode_f64s("not base64!").is_err());
}

#[test]
fn save_load_predict_is_bitwise_identical() {
    let (model, train) = fitted();
    let names = names(train.len() - 1);
    let file = ModelFile::from_model(&model, &names, train[0].len(), 3, MarginSpec::Kde).unwrap();
    assert_eq!(file.format_version, FORMAT_VERSION);
    assert_eq!(file.order.len(), 3);
    assert_eq!(file.metadata.trace.len(), 3);
    assert_eq!(file.copulas.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 3]);
    let json = file.to_json().unwrap();
    let loaded = ModelFile::from_json(&json).unwrap();
    assert_eq!(loaded, file);
    let saved = loaded.load().unwrap();

    let rows = random_rows(&train, 100, 11);
    let alphas = [0.05, 0.25, 0.5, 0.75, 0.95];
    let direct = model.predict(&alphas, &rows).unwrap();
    let restored = saved.predict(&alphas, &names, &rows).unwrap();
    for (a, b) in direct.iter().zip(&restored) {
        assert_eq!(a.len(), 100);
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn column_order_in_prediction_data_does_not_matter() {
    let (model, train) = fitted();
    let names = names(train.len() - 1);
    let saved = ModelFile::from_model(&model, &names, 150, 3, MarginSpec::Kde)
        .unwrap()
        .load()
        .unwrap();
    let rows = random_rows(&train, 20, 12);
    let mut perm_names: Vec<String> = names.iter().skip(1).rev().cloned().collect();
    let mut perm_rows: Vec<Vec<f64>> = rows.iter().skip(1).rev().cloned().collect();
    perm_names.push("extra".into());
    perm_rows.push(vec![0.0; 20]);
    let a = saved.predict(&[0.3], &names, &rows).unwrap();
    let b = saved.predict(&[0.3], &perm_names, &perm_rows).unwrap();
    assert_eq!(a, b);
    let missing = &saved.variables[1];
    let keep: Vec<usize> = (0..names.len()).filter(|&i| &names[i] != missing).collect();
    let sub_names: Vec<String> = keep.iter().map(|&i| names[i].clone()).collect();
    let sub_rows: Vec<Vec<f64>> = keep.iter().map(|&i| rows[i].clone()).collect();
    let err = saved.predict(&[0.3], &sub_names, &sub_rows).unwrap_err().to_string();
    assert!(err.contains(missing.as_str()), "{err}");
}

#[test]
fn parametric_vines_roundtrip() {
    let order = VineOrder::new(VineKind::C, 0, vec![1, 2]).unwrap();
    let gauss = PairCopula::Param(FamilySpec::new(Family::Gauss, 0.6).unwrap());
    let clayton = PairCopula::Param(FamilySpec::new(Family::Clayton, 2.0).unwrap());
    let vine = FittedVine::from_columns(
        order,
        vec![vec![gauss.clone()], vec![clayton, gauss]],
        vec![MarginalModel::uniform(); 3],
    )
    .unwrap();
    let trace = vineqr::select::SelectionTrace {
        config: SelectionConfig::new(VineKind::C, Strategy::OneStep, 2),
        steps: Vec::new(),
        final_order: vine.order().clone(),
    };
    let model = VineQuantileRegression::from_parts(vine, trace);
    let names = names(2);
    let file = ModelFile::from_model(&model, &names, 0, 0, MarginSpec::Uniform).unwrap();
    assert!(file.to_json().unwrap().contains("\"parametric\""));
    let saved = ModelFile::from_json(&file.to_json().unwrap()).unwrap().load().unwrap();
    let rows = vec![vec![0.0; 3], vec![0.2, 0.5, 0.9], vec![0.7, 0.1, 0.4]];
    assert_eq!(
        model.predict(&[0.1, 0.9], &rows).unwrap(),
        saved.predict(&[0.1, 0.9], &names, &rows).unwrap()
    );
}

#[test]
fn malformed_files_are_rejected() {
    let (model, train) = fitted();
    let names = names(train.len() - 1);
    let file = ModelFile::from_model(&model, &names, 150, 3, MarginSpec::Kde).unwrap();
    let json = file.to_json().unwrap();
    let future = json.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    assert!(ModelFile::from_json(&future)
        .unwrap_err()
        .to_string()
        .contains("format_version"));
    assert!(ModelFile::from_json("{").is_err());
    let mut short = file.clone();
    short.marginals.pop();
    assert!(short.load().is_err());
    let mut bad_grid = file.clone();
    bad_grid.z_nodes = encode_f64s(&[0.0; 64]);
    assert!(bad_grid.load().is_err());
    let mut truncated = file;
    truncated.copulas[0].clear();
    assert!(truncated.load().is_err());
}
