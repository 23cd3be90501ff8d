use active_testkit::checks::{gradient_check, graph_oracle_check, loss_oracle_check, metric_check, Summary};

fn assert_passed(name: &str, s: &Summary) {
    assert!(s.cases > 0, "{name}: nothing checked");
    assert!(
        s.passed(),
        "{name}: {} of {} cases failed, first: {:?}",
        s.failures.len(),
        s.cases,
        s.failures.first()
    );
}

#[test]
fn losses_match_loop_references() {
    let s = loss_oracle_check(60, 11, 1e-10);
    assert_passed("losses", &s);
}

#[test]
fn gradients_match_finite_differences() {
    for (term, s) in gradient_check(12, 500, 1e-4) {
        assert_passed(term.name(), &s);
    }
}

#[test]
fn graphs_match_exhaustive_search() {
    let s = graph_oracle_check(25, 900);
    assert_passed("graphs", &s);
}

#[test]
fn metrics_match_references() {
    let s = metric_check(200, 3);
    assert_passed("metrics", &s);
}
