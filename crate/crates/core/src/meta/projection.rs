use crate::error::Result;
use crate::real::Real;
use crate::vector;

/// `g_adv - (⟨g_adv, d⟩ / (‖d‖² + ε)) d`.
pub fn project_gradient<S: Real>(g_adv: &[S], d: &[S], epsilon: f64) -> Result<Vec<S>> {
    vector::check_len(g_adv, d)?;
    let coef = vector::dot(g_adv, d) / (vector::norm_sq(d) + S::lit(epsilon));
    Ok(g_adv.iter().zip(d).map(|(&g, &dk)| g - coef * dk).collect())
}
