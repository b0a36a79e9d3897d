//! Metrics against brute-force references.

mod oracles;

use oracles::metrics as o;

#[test]
fn dsc_and_asd_match_brute_force() {
    o::dsc_and_asd_match_brute_force()
}

#[test]
fn identical_masks_score_perfectly() {
    o::identical_masks_score_perfectly()
}

#[test]
fn wilcoxon_exact_matches_enumeration() {
    o::wilcoxon_exact_matches_enumeration()
}

#[test]
fn wilcoxon_normal_approximation_tracks_the_exact_tail() {
    o::wilcoxon_normal_approximation_tracks_the_exact_tail()
}

#[test]
fn benjamini_hochberg_matches_definition() {
    o::benjamini_hochberg_matches_definition()
}
