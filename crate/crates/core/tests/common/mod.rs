#![allow(dead_code)]

use std::io::Write;

use dacbf::history::TimedInputBuffer;
use dacbf::sim::RunTrace;
use nalgebra::DVector;

/// Input history as the controller saw it at step `k`: every input
/// committed strictly before `t_k`.
pub fn inputs_before(trace: &RunTrace, k: usize) -> TimedInputBuffer {
    let tc = trace.config.sim.control_dt;
    let mut b = TimedInputBuffer::new(1, trace.config.sim.t_end + 1.0, tc)
        .unwrap()
        .with_pre_run(DVector::zeros(1), 0.0)
        .unwrap();
    for s in &trace.steps[..k] {
        b.push(s.t, s.u.clone()).unwrap();
    }
    b
}

/// Writes a verdict line straight to stderr so it shows even when the
/// harness captures test output.
pub fn verdict(label: &str, ok: bool, detail: &str) {
    let line = format!("{} {label}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}
