mod common;

#[test]
fn anchoring_preserves_length() {
    common::prop_anchoring_preserves_length().unwrap();
}

#[test]
fn pseudo_pairs_keep_direction() {
    common::prop_pseudo_pair_direction().unwrap();
}

#[test]
fn precision_at_k_is_nested() {
    common::prop_precision_nesting().unwrap();
}

#[test]
fn shared_layers_are_one_parameter() {
    common::prop_shared_parameter_identity().unwrap();
}

#[test]
fn noise_displacement_is_bounded_by_window() {
    common::prop_noise_displacement_bound().unwrap();
}

#[test]
fn full_runs_are_seed_reproducible() {
    common::prop_seed_reproducibility().unwrap();
}

#[test]
fn csls_matches_brute_force_on_200_words() {
    let src = common::random_space(200, 12, 11, "s");
    let tgt = common::random_space(200, 12, 12, "t");
    let fast: Vec<Vec<String>> = anchormt::baselines::csls::csls_neighbors(&src, &tgt, 10)
        .unwrap()
        .into_iter()
        .map(|v| v.into_iter().map(|(w, _)| w).collect())
        .collect();
    assert_eq!(fast, common::brute_force_csls(&src, &tgt, 10));
}
