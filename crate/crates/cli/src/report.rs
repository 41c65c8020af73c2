//! Consolidated report. Cheap stages are recomputed from the configuration;
//! the particle stage is read from a matching artifact or marked missing.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{
    run_check, run_drift, run_limit, run_montecarlo, run_propagate, run_sweep, CliError, Context, McSummary,
    Outcome,
};
use crate::output::fmt_f64;

fn missing(reason: impl std::fmt::Display) -> Value {
    json!({ "status": "missing", "reason": reason.to_string() })
}

/// Largest pairwise relative difference `|a - b| / max(|a|, |b|)`.
pub fn spread(values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
        }
    }
    worst
}

#[derive(Serialize)]
pub struct Report {
    pub equilibrium: Value,
    pub assumptions: Value,
    pub exponent: Value,
    pub kappa: Value,
    pub consistency: Value,
    pub drift: Value,
    pub propagator: Value,
    pub montecarlo: Value,
}

fn mc_matches(s: &McSummary, ctx: &Context, beta: f64) -> bool {
    let mc = &ctx.cfg.montecarlo;
    s.beta == beta && s.n == mc.n && s.eps == mc.eps && s.t_macro == mc.t_macro && s.seed == mc.seed && s.dt <= mc.dt
}

pub fn build_report(ctx: &Context) -> Result<Report, CliError> {
    let cfg = &ctx.cfg;
    let check = run_check(cfg);
    let equilibrium = json!({
        "family": cfg.equilibrium.family,
        "d": cfg.equilibrium.d,
        "beta": cfg.beta(),
        "alpha": (cfg.beta() - cfg.equilibrium.d as f64 + 2.0) / 3.0,
    });
    let assumptions = serde_json::to_value(&check).unwrap_or(Value::Null);
    let model = if cfg.beta_admissible() { cfg.model().ok() } else { None };
    let Some(model) = model else {
        let reason = "equilibrium rejected by the assumption check";
        return Ok(Report {
            equilibrium,
            assumptions,
            exponent: missing(reason),
            kappa: missing(reason),
            consistency: missing(reason),
            drift: missing(reason),
            propagator: missing(reason),
            montecarlo: missing(reason),
        });
    };

    let fit = match run_sweep(cfg, &model) {
        Ok(s) => s.fit.map_err(|e| e.to_string()),
        Err(e) => Err(e.to_string()),
    };
    let exponent = match &fit {
        Ok(f) => json!({
            "status": "ok",
            "alpha_hat": f.alpha_hat,
            "alpha_ref": f.alpha_ref,
            "relative_error": (f.alpha_hat - f.alpha_ref).abs() / f.alpha_ref,
            "kappa_hat": f.kappa_hat,
            "fit_residual": f.fit_residual,
        }),
        Err(e) => missing(e),
    };

    let limit = if model.d() == 1 { run_limit(cfg, &model).map_err(|e| e.to_string()) } else { Err("limit problem is solved for d = 1".into()) };
    let kappa = json!({
        "sweep": fit.as_ref().ok().map(|f| f.kappa_hat),
        "unified": limit.as_ref().ok().map(|l| l.kappa_unified),
        "branch": limit.as_ref().ok().map(|l| json!({ "re": l.kappa_branch.re, "im": l.kappa_branch.im })),
        "regime": limit.as_ref().ok().map(|l| l.regime.tag()),
        "limit_error": limit.as_ref().err(),
    });
    let consistency = match (&fit, &limit) {
        (Ok(f), Ok(l)) => {
            let values = [f.kappa_hat, l.kappa_unified, l.kappa_branch.re];
            let s = spread(&values);
            let branch_im_ratio = l.kappa_branch.im.abs() / l.kappa_branch.re.abs();
            json!({
                "status": "ok",
                "kappa_spread": s,
                "positive": values.iter().all(|v| *v > 0.0),
                "branch_im_ratio": branch_im_ratio,
                "pass": s <= cfg.tolerances.kappa_spread && values.iter().all(|v| *v > 0.0),
            })
        }
        (Err(e), _) | (_, Err(e)) => missing(e),
    };

    let drift = match run_drift(cfg, &model) {
        Ok(d) => {
            let mut v = serde_json::to_value(&d).unwrap_or(Value::Null);
            v["status"] = json!("ok");
            v
        }
        Err(e) => missing(e),
    };

    let propagator = match run_propagate(cfg, &model) {
        Ok((t, r)) => json!({
            "status": "ok",
            "monotone_fraction": t.monotone_fraction,
            "max_err_at_smallest_eps": t.max_err_at_smallest_eps,
            "max_projection_error": t.max_projection_error,
            "reference": r,
        }),
        Err(e) => missing(e),
    };

    let stored: Option<McSummary> =
        ctx.out.read_json("mc_summary.json").and_then(|v| serde_json::from_value(v).ok()).filter(|s| mc_matches(s, ctx, model.beta()));
    let mc = match stored {
        Some(s) => Ok(s),
        None if cfg.report.run_montecarlo && model.d() == 1 => run_montecarlo(cfg, &model).map(|o| o.summary).map_err(|e| e.to_string()),
        None => Err("no matching mc_summary.json in the output directory; run `kfp montecarlo` first".to_string()),
    };
    let montecarlo = match mc {
        Ok(s) => json!({
            "status": "ok",
            "cf_pass": s.cf_pass,
            "ks_initial": s.ks_initial,
            "ks_final": s.ks_final,
            "cf": s.cf,
        }),
        Err(e) => missing(e),
    };

    Ok(Report { equilibrium, assumptions, exponent, kappa, consistency, drift, propagator, montecarlo })
}

fn line(out: &mut String, label: &str, v: &Value) {
    let text = match v {
        Value::Number(n) if n.is_u64() || n.is_i64() => n.to_string(),
        Value::Number(n) => fmt_f64(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(t) => t.clone(),
        Value::Null => "-".to_string(),
        other => other.to_string(),
    };
    let _ = writeln!(out, "  {label:<26} {text}");
}

/// Plain-text rendering of the report.
pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "equilibrium");
    for k in ["family", "d", "beta", "alpha"] {
        line(&mut s, k, &r.equilibrium[k]);
    }
    let _ = writeln!(s, "assumptions");
    line(&mut s, "pass", &r.assumptions["pass"]);
    let sections: [(&str, &Value, &[&str]); 6] = [
        ("exponent", &r.exponent, &["alpha_hat", "alpha_ref", "relative_error", "kappa_hat"]),
        ("kappa", &r.kappa, &["sweep", "unified", "regime"]),
        ("consistency", &r.consistency, &["kappa_spread", "branch_im_ratio", "pass"]),
        ("drift", &r.drift, &["regime", "j1", "log_ratio"]),
        ("propagator", &r.propagator, &["monotone_fraction", "max_err_at_smallest_eps", "max_projection_error"]),
        ("montecarlo", &r.montecarlo, &["cf_pass", "ks_initial", "ks_final"]),
    ];
    for (name, v, keys) in sections {
        let _ = writeln!(s, "{name}");
        if v["status"] == "missing" {
            line(&mut s, "missing", &v["reason"]);
            continue;
        }
        for k in keys {
            line(&mut s, k, &v[*k]);
        }
    }
    if let Some(b) = r.kappa.get("branch").filter(|b| !b.is_null()) {
        let _ = writeln!(s, "kappa branch");
        line(&mut s, "re", &b["re"]);
        line(&mut s, "im", &b["im"]);
    }
    s
}

pub fn cmd_report(ctx: &Context) -> Result<Outcome, CliError> {
    let r = build_report(ctx)?;
    ctx.out.write_json("report.json", &r)?;
    ctx.out.write_text("report.txt", &render_text(&r))?;
    Ok(Outcome::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_is_symmetric_relative() {
        assert_eq!(spread(&[1.0, 1.0, 1.0]), 0.0);
        assert!((spread(&[1.0, 0.9, 0.95]) - 0.1).abs() < 1e-15);
        assert_eq!(spread(&[2.0]), 0.0);
    }
}
