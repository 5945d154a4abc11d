mod common;

use std::collections::BTreeMap;

use common::gradient_suite;

#[test]
fn analytic_gradients_match_central_differences() {
    // (checked, skipped) per check, summed over seeds
    let mut coverage: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for seed in 0..10 {
        for c in gradient_suite(seed) {
            let r = &c.report;
            assert!(r.max_rel_error < 1e-3, "seed {seed} {}: {r:?}", c.name);
            let e = coverage.entry(c.name).or_default();
            e.0 += r.checked;
            e.1 += r.skipped_at_kinks;
        }
    }
    for (name, (checked, skipped)) in coverage {
        assert!(
            checked > 0 && checked * 10 >= checked + skipped,
            "{name}: only {checked} of {} probes avoided kinks",
            checked + skipped
        );
    }
}
