use std::io::Write;

use super::counts_line;
use crate::data::load_graphs;
use crate::{CliResult, ValidateArgs};

pub fn run(a: ValidateArgs, out: &mut dyn Write) -> CliResult<()> {
    for (path, g) in load_graphs(&a.data)? {
        let labeled = g.nodes().iter().filter(|n| n.mask).count();
        let statics = g.len() - g.dynamic_count();
        counts_line(
            out,
            &format!("{} ok statics={statics} labeled={labeled} ", path.display()),
            &g,
        )?;
    }
    Ok(())
}
