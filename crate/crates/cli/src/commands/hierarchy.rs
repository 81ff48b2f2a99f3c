use curlhom::cell::layered::LayeredMedium;
use curlhom::cell::spectral::SpectralMedium;
use curlhom::cell::{CellHierarchy, CellMedium, EquivalenceReport};
use curlhom::field::PeriodicField;
use curlhom::tensor::ConstTensor;
use serde::Serialize;

use super::{CommandOpts, Summary};
use crate::config::{CoefficientSpec, RunConfig};
use crate::error::CliResult;
use crate::output::Output;

#[derive(Serialize)]
struct Pair {
    j: usize,
    k: usize,
    tensor: ConstTensor,
}

#[derive(Serialize)]
struct HierarchyDoc {
    medium: &'static str,
    grid_n: Option<usize>,
    levels: usize,
    /// hat h^(2), hat h^(3), ...
    hat_h: Vec<ConstTensor>,
    tilde_h: Vec<Pair>,
    equivalence: Vec<EquivalenceReport>,
}

fn describe<M: CellMedium>(h: &CellHierarchy<M>, medium: &'static str, grid_n: Option<usize>) -> CliResult<HierarchyDoc> {
    let levels = h.depth();
    let mut tilde_h = Vec::new();
    for ((j, k), tensor) in h.tilde_pairs(levels - 1)? {
        tilde_h.push(Pair { j, k, tensor });
    }
    let equivalence = (0..levels).map(|n| h.verify_equivalence(n)).collect::<Result<Vec<_>, _>>()?;
    Ok(HierarchyDoc { medium, grid_n, levels, hat_h: h.hat_h_list(), tilde_h, equivalence })
}

/// Correctors, homogenised tensors and both coefficient families up to the
/// configured level. Grid-based media also write their corrector fields.
pub fn cmd_hierarchy(cfg: &RunConfig, out: &mut Output, _opts: CommandOpts) -> CliResult<Summary> {
    let doc = match &cfg.coefficient {
        CoefficientSpec::Laminate { .. } => {
            let h = CellHierarchy::build(LayeredMedium::new(&cfg.coefficient.profile()?), cfg.levels)?;
            describe(&h, "laminate (exact 1D chain)", None)?
        }
        other => {
            let m = SpectralMedium::from_smooth(cfg.grid_n, &other.smooth())?;
            let h = CellHierarchy::build(m, cfg.levels)?;
            for j in 1..=cfg.levels {
                let n = &h.level(j)?.n;
                let f = PeriodicField::new(n.order, cfg.grid_n, n.comps.clone())?;
                out.field(&format!("corrector_{j}.bin"), &f)?;
            }
            describe(&h, other.name(), Some(cfg.grid_n))?
        }
    };
    out.json("hierarchy.json", &doc)?;
    let mut lines = vec![format!("{} levels on {}", doc.levels, doc.medium)];
    for r in &doc.equivalence {
        lines.push(format!("n={}: symmetrised deviation {:.3e} (relative {:.3e})", r.n, r.max_deviation, r.relative_deviation));
    }
    Ok(Summary::ok(lines))
}
