use mpgs::instances::random_sgep;
use mpgs::solvers::{mpgsa_solve, SolverConfig};

fn main() -> mpgs::Result<()> {
    // Trace-ratio instance on a random SPD pencil: n=100, p=3, l1 weight 0.21.
    let instance = random_sgep(100, 3, 0.21, None, 7)?;
    let problem = instance.problem();
    let x0 = problem.manifold().random_point_seeded(7);
    let result = mpgsa_solve(&problem, &x0, &SolverConfig::default())?;
    println!(
        "F = {:.6e} after {} iterations ({})",
        result.f_value, result.iterations, result.termination
    );
    Ok(())
}
