use tlfea_core::pipeline::{run_simulation, RunOptions};
fn main() -> tlfea_core::Result<()> {
    let mut sim = tlfea::scenes::joint_pull(tlfea::scenes::JointKindSel::Spherical, 80.0)?;
    run_simulation(&mut sim, &RunOptions::default(), |_, rec| {
        if rec.constraint_norm > 1e-8 || rec.step % 200 == 0 {
            println!("step {:4} t={:.4} inner={} outer={} |g|={:.2e} |c|={:.2e} conv={}",
                rec.step, rec.t, rec.inner, rec.outer, rec.grad_norm, rec.constraint_norm, rec.converged);
        }
    })?;
    Ok(())
}
