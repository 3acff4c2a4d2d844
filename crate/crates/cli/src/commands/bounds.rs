use clap::Args;
use influence::ihvp::{
    ekfac_effective_eigenvalues, ekfac_error_bound, eigenbasis_diagonal, estimate_lissa_opnorm, exact_lissa_opnorm,
    fit_ekfac, lissa_error_bound, CurvatureOperator, Damping, LissaSolver,
};
use influence::{model, ModelError};

use super::{parse_damping, ModelInputs};
use crate::context::{check_compatible, load_model, Run};
use crate::error::CliResult;
use crate::manifest::{ManifestBuilder, OutDir};
use crate::report::{csv_bytes, num};

/// Power-iteration steps for the operator-norm estimate.
const POWER_STEPS: usize = 200;

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Damping λ > 0. Overrides the config.
    #[arg(long, value_parser = parse_damping)]
    pub damping: Option<Damping>,
    /// LiSSA depths to bound, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,50,200")]
    pub iterations: Vec<usize>,
}

/// Bounds are per unit `‖v‖`. The EK-FAC row assumes each layer block is
/// diagonal in the fitted Kronecker eigenbasis and needs the dense curvature,
/// so it is skipped for models too large to materialize it.
pub fn bounds(args: &BoundsArgs, mut manifest: ManifestBuilder) -> CliResult<()> {
    let mut run = Run::load(&args.inputs.config, &mut manifest)?;
    let solver_cfg = run.resolve_solver(None, args.damping);
    manifest.seed("power_iteration", solver_cfg.lissa.seed);
    let checkpoint = load_model(&args.inputs.checkpoint, &mut manifest)?;
    let (train, _) = run.train(&mut manifest)?;
    let params = &checkpoint.params;
    check_compatible(params, &train, "training set")?;
    let damping = solver_cfg.damping;

    let lissa = LissaSolver::new(CurvatureOperator::gauss_newton(params, &train)?, solver_cfg.lissa_config())?;
    let alpha = lissa.alpha();
    let estimate = estimate_lissa_opnorm(lissa.operator(), alpha, damping, POWER_STEPS, solver_cfg.lissa.seed)?;
    let dense = match model::dense_gnh(params, &train) {
        Ok(g) => Some(g),
        Err(ModelError::TooLarge { p, limit }) => {
            println!("p = {p} exceeds {limit}: skipping bounds that need the dense curvature");
            None
        }
        Err(e) => return Err(e.into()),
    };

    let mut rows = Vec::new();
    let mut lissa_rows = |route: &str, norm: f64| -> CliResult<()> {
        for &j in &args.iterations {
            let bound = lissa_error_bound(alpha, norm, j, 1.0)?;
            rows.push(vec![route.to_string(), j.to_string(), num(alpha), num(norm), num(bound)]);
        }
        Ok(())
    };
    lissa_rows("lissa_estimated_norm", estimate)?;
    if let Some(g) = &dense {
        lissa_rows("lissa_exact_norm", exact_lissa_opnorm(g, alpha, damping))?;
        let state = fit_ekfac(params, &train, solver_cfg.sampling())?;
        let truth = eigenbasis_diagonal(&state, g)?;
        let bound = ekfac_error_bound(&truth, &ekfac_effective_eigenvalues(&state), damping, 1.0)?;
        rows.push(vec!["ekfac_shared_basis".into(), String::new(), String::new(), String::new(), num(bound)]);
    }

    let mut out = OutDir::create(&args.inputs.out)?;
    out.write(
        "bounds.csv",
        &csv_bytes(&["route", "iterations", "alpha", "opnorm", "bound"], &rows)?,
    )?;
    println!("LiSSA: alpha {alpha:.6e}, estimated ‖I − α(G + λI)‖ {estimate:.6}");
    manifest.config(&run.config);
    manifest.finish(out)?;
    Ok(())
}
