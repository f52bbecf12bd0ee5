use dsn_core::oracle::{self, check_case, check_model, corrupted_si_mse, loss_cases, TRIALS};

#[test]
fn every_loss_matches_finite_differences() {
    for case in loss_cases() {
        let r = check_case(&case, TRIALS, 11).unwrap();
        assert!(r.passes(), "{}: worst {:e}", r.name, r.worst);
    }
}

#[test]
fn corrupted_backward_is_caught() {
    let r = check_case(&corrupted_si_mse(), 3, 11).unwrap();
    assert!(!r.passes(), "worst {:e}", r.worst);
}

#[test]
fn models_match_finite_differences_end_to_end() {
    for (scenario, variant, sim) in oracle::MODEL_PROBES {
        let r = check_model(scenario, variant, sim, 3).unwrap();
        assert!(r.passes(), "{}: worst {:e}", r.name, r.worst);
        assert!(r.trials > 0);
    }
}
