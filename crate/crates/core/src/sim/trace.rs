use std::io::{self, Write};

use super::engine::SlotRecord;
use crate::config::NetworkConfig;
use crate::numeric::sig6;

pub fn write_trace_header(cfg: &NetworkConfig, out: &mut dyn Write) -> io::Result<()> {
    write!(out, "slot,queue,Q_total,served_flow")?;
    for (n, q) in cfg.queues.iter().enumerate() {
        for k in 0..q.flows.len() {
            write!(out, ",admitted_{n}_{k}")?;
        }
    }
    writeln!(out)
}

/// One row per queue: its backlog before the slot, the flow it served (blank
/// if none) and every flow's admitted rate.
pub fn write_trace_rows(rec: &SlotRecord, out: &mut dyn Write) -> io::Result<()> {
    for (n, q) in rec.q_before.iter().enumerate() {
        write!(out, "{},{n},{q},", rec.slot)?;
        if let (Some(s), Some(p)) = (rec.serve_queue, rec.served) {
            if s == n {
                write!(out, "{}", p.flow)?;
            }
        }
        for x in rec.admitted.iter().flatten() {
            write!(out, ",{}", sig6(*x))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
