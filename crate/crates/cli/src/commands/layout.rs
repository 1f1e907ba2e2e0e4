use penning_probe::electrodes::TrapModel;

use crate::cli::LayoutArgs;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::{OutDir, Table};

pub fn run(cfg: &RunConfig, args: &LayoutArgs, out: &mut OutDir) -> CliResult<()> {
    let trap = match &args.check {
        Some(p) => TrapModel::load(p)?,
        None => cfg.trap()?,
    };
    let mut table = Table::new("electrodes", &["id", "group", "x1_um", "x2_um", "z1_um", "z2_um"]);
    for e in &trap.electrodes {
        table.push(vec![
            e.id.as_str().into(),
            e.group.as_str().into(),
            (e.extent.x1 * 1e6).into(),
            (e.extent.x2 * 1e6).into(),
            (e.extent.z1 * 1e6).into(),
            (e.extent.z2 * 1e6).into(),
        ]);
    }
    say!("{} electrodes in {} groups, B = {} T", trap.electrodes.len(), trap.groups().len(), trap.b);
    if args.check.is_none() {
        out.write_bytes("layout.toml", trap.to_toml().as_bytes())?;
    }
    out.write_table("electrodes", &table)
}
