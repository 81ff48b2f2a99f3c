use curlhom::cell::spectral::SpectralMedium;
use curlhom::cell::CellHierarchy;
use curlhom::laminate::laminate_report;
use curlhom::tensor::symmetrize;
use serde::Serialize;
use serde_json::json;

use super::{CommandOpts, Summary};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::Output;

#[derive(Serialize)]
struct CrossRow {
    order: usize,
    max_abs_diff: f64,
    laminate_max_abs: f64,
}

/// Closed-form constants, tensors and identity checks, plus a comparison of
/// the laminate tensors with the spectral pipeline on the smoothed profile.
pub fn cmd_laminate(cfg: &RunConfig, out: &mut Output, _opts: CommandOpts) -> CliResult<Summary> {
    let profile = cfg.coefficient.profile()?;
    let report = laminate_report(&profile, cfg.tolerances.identity)?;
    let two_layer = profile.layers() == 2;

    let mut data = serde_json::to_value(&report)?;
    if !two_layer {
        // the identities are stated for two layers only
        data["checks"] = serde_json::Value::Null;
    }
    out.json("laminate.json", &data)?;
    if two_layer {
        out.json("identities.json", &report.checks)?;
    }

    let levels = cfg.levels.min(3);
    let spec = CellHierarchy::build(SpectralMedium::from_smooth(cfg.grid_n, &cfg.coefficient.smooth())?, levels)?;
    let mut rows = Vec::new();
    let mut csv = String::from("order,max_abs_diff,laminate_max_abs\n");
    for r in 2..=levels + 1 {
        let lam = &report.hat_h[r - 2];
        let d = symmetrize(spec.hat_h(r)?).max_abs_diff(&symmetrize(lam));
        csv += &format!("{r},{d:e},{:e}\n", lam.max_abs());
        rows.push(CrossRow { order: r, max_abs_diff: d, laminate_max_abs: lam.max_abs() });
    }
    out.json("cross_check.json", &json!({ "grid_n": cfg.grid_n, "smoothing_cells": 2.0, "rows": rows }))?;
    out.csv("cross_check.csv", &csv)?;

    let mut lines = vec![format!(
        "a={:e} b={:e} c={:e} d={:e} e={:e} f={:e}",
        report.a, report.b, report.c, report.d, report.e, report.f
    )];
    if two_layer {
        let c = &report.checks;
        lines.push(format!(
            "a=b=0: {}  c=-d: {}  closed forms: {}  h1=-h5: {}  h2=-h7: {}  h3=-h6: {}  h4!=0: {}",
            c.a_b_vanish, c.c_equals_minus_d, c.closed_form_match, c.h1_minus_h5, c.h2_minus_h7, c.h3_minus_h6, c.h4_nonzero
        ));
    }
    for r in &rows {
        lines.push(format!("spectral vs laminate hat h^({}): {:.3e}", r.order, r.max_abs_diff));
    }
    Ok(Summary::ok(lines))
}
