//! Shared helpers for the integration tests.
//!
//! The feasibility rules are re-implemented here from the problem statement
//! rather than imported, so a bug in the library's own checker cannot hide a
//! violation produced by the decoder.

/// Returns every way `seq` breaks the scheduling rules for an instance with
/// `n_machines` real machines, `horizon` periods, and `dup` crew slots per
/// period: the sequence must fill exactly `horizon * dup` slots, every entry
/// must name a real machine or the idle row `n_machines`, and each machine
/// must be maintained exactly once. The per-period capacity rule is implied
/// by the slot encoding (a period owns `dup` slots) but is checked on its own
/// terms anyway.
pub fn feasibility_violations(
    seq: &[usize],
    n_machines: usize,
    horizon: usize,
    dup: usize,
) -> Vec<String> {
    let mut faults = Vec::new();
    let slots = horizon * dup;
    if seq.len() != slots {
        faults.push(format!("sequence fills {} slots, instance has {slots}", seq.len()));
    }
    let idle = n_machines;
    let mut visits = vec![0usize; n_machines];
    for (i, &row) in seq.iter().enumerate() {
        if row > idle {
            faults.push(format!("slot {i} names row {row}, but rows end at {idle}"));
        } else if row < idle {
            visits[row] += 1;
        }
    }
    for (machine, count) in visits.iter().enumerate() {
        if *count != 1 {
            faults.push(format!("machine {machine} maintained {count} times"));
        }
    }
    for period in 0..horizon {
        let window = seq.iter().skip(period * dup).take(dup);
        let real = window.filter(|&&row| row < idle).count();
        if real > dup {
            faults.push(format!("period {period} holds {real} actions, limit {dup}"));
        }
    }
    faults
}
