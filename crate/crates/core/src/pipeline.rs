//! The end-to-end analysis pipeline: listing -> CFG -> sp values -> refined
//! attributes -> WCET-equivalent program.

use thiserror::Error;

use crate::cfgbuild::{build_cfg, BuiltCfg, CfgError};
use crate::config::ToolConfig;
use crate::graph::GraphError;
use crate::listing::{parse_listing, ParseError, Program};
use crate::slice::{coarse_attrs, refine_refdef, wcet_abstraction, AbstractProgram, Attrs, SpAnalysis};

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Everything the front half of the tool derives from a listing.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub prog: Program,
    pub built: BuiltCfg,
    pub refined: Attrs,
    pub ap: AbstractProgram,
}

impl Analysis {
    pub fn sp(&self) -> &SpAnalysis {
        &self.built.sp
    }
}

/// Run parse -> CFG reconstruction -> refinement -> abstraction.
pub fn analyze(text: &str, cfg: &ToolConfig) -> Result<Analysis, AnalyzeError> {
    let prog = parse_listing(text)?;
    let built = build_cfg(&prog, cfg.init_sp, cfg.sim_step_budget)?;
    let attrs = coarse_attrs(&prog, built.cfg.instr_nodes().collect::<Vec<_>>().iter());
    let refined = refine_refdef(&prog, &attrs, &built.sp);
    let ap = wcet_abstraction(&built.cfg, &prog, &refined)?;
    Ok(Analysis { prog, built, refined, ap })
}
