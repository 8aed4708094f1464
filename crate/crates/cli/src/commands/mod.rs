pub mod ablate;
pub mod bench;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod train;
pub mod validate;

use std::io::Write;

use etdnet::FullHistoryGraph;

use crate::CliResult;

pub(crate) fn counts_line(out: &mut dyn Write, prefix: &str, g: &FullHistoryGraph) -> CliResult<()> {
    writeln!(
        out,
        "{prefix}nodes={} intra={} inter={}",
        g.len(),
        g.intra_edges().len(),
        g.inter_edges().len()
    )?;
    Ok(())
}
