mod common;

use common::{gradient_check, FD_TOL};

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..20 {
        let rep = gradient_check(seed);
        assert!(rep.worst < FD_TOL, "seed {seed}: worst {:e} at {}", rep.worst, rep.worst_at);
        assert!(rep.checked > 2000);
    }
}
