//! Hidden-state update rules other than the direct network output.

use crate::autodiff::Backend;
use crate::error::Result;

pub enum Diffusivity<V> {
    None,
    Fixed(f64),
    /// Square root of the diffusivity, shape `[1]`.
    Learned(V),
}

/// Explicit Euler step of `dH/dt = -div(H U) + xi lap H` with first-order
/// upwind face values. The flux form telescopes, so channel sums are
/// conserved exactly up to rounding.
pub fn transport<B: Backend>(
    b: &mut B,
    u: &B::Value,
    h: &B::Value,
    dx: f64,
    dy: f64,
    dt: f64,
    xi: Diffusivity<B::Value>,
) -> Result<B::Value> {
    let ux = b.slice_channels(u, 0, 1)?;
    let uy = b.slice_channels(u, 1, 1)?;

    // flux through the left face of cell i: u+ H[i-1] - u- H[i]
    let fx = upwind_flux(b, &ux, h, 1, 0)?;
    let fy = upwind_flux(b, &uy, h, 0, 1)?;
    let fx_right = b.shift(&fx, -1, 0)?;
    let fy_up = b.shift(&fy, 0, -1)?;
    let ddx = b.sub(&fx_right, &fx)?;
    let ddy = b.sub(&fy_up, &fy)?;
    let ddx = b.scale(&ddx, -dt / dx)?;
    let ddy = b.scale(&ddy, -dt / dy)?;
    let mut inc = b.add(&ddx, &ddy)?;

    let lap = match &xi {
        Diffusivity::None => None,
        _ => Some(laplacian(b, h, dx, dy)?),
    };
    match (xi, lap) {
        (Diffusivity::Fixed(k), Some(lap)) => {
            let d = b.scale(&lap, dt * k)?;
            inc = b.add(&inc, &d)?;
        }
        (Diffusivity::Learned(s), Some(lap)) => {
            let k = b.square(&s)?;
            let d = b.mul_scalar(&lap, &k)?;
            let d = b.scale(&d, dt)?;
            inc = b.add(&inc, &d)?;
        }
        _ => {}
    }
    b.add(h, &inc)
}

fn upwind_flux<B: Backend>(b: &mut B, vel: &B::Value, h: &B::Value, sx: isize, sy: isize) -> Result<B::Value> {
    let pos = b.relu(vel)?;
    let neg_vel = b.scale(vel, -1.0)?;
    let neg = b.relu(&neg_vel)?;
    let upstream = b.shift(h, sx, sy)?;
    let a = b.mul(&upstream, &pos)?;
    let c = b.mul(h, &neg)?;
    b.sub(&a, &c)
}

fn laplacian<B: Backend>(b: &mut B, h: &B::Value, dx: f64, dy: f64) -> Result<B::Value> {
    let l = b.shift(h, 1, 0)?;
    let r = b.shift(h, -1, 0)?;
    let d = b.shift(h, 0, 1)?;
    let u = b.shift(h, 0, -1)?;
    let sx = b.add(&l, &r)?;
    let sy = b.add(&d, &u)?;
    let sx = b.scale(&sx, 1.0 / (dx * dx))?;
    let sy = b.scale(&sy, 1.0 / (dy * dy))?;
    let c = b.scale(h, -2.0 / (dx * dx) - 2.0 / (dy * dy))?;
    let s = b.add(&sx, &sy)?;
    b.add(&s, &c)
}

/// `(1 - z) H_prev + z H~`.
pub fn gated<B: Backend>(b: &mut B, h_prev: &B::Value, z: &B::Value, cand: &B::Value) -> Result<B::Value> {
    let keep = b.affine(z, -1.0, 1.0)?;
    let a = b.mul(&keep, h_prev)?;
    let c = b.mul(z, cand)?;
    b.add(&a, &c)
}

/// LSTM-style split: the first `half` channels are a memory cell updated
/// as `(1 - f) c_prev + f c~`, the rest are the exposed state `o * c`.
pub fn lstm_split<B: Backend>(
    b: &mut B,
    h_prev: &B::Value,
    z: &B::Value,
    cand: &B::Value,
    half: usize,
) -> Result<B::Value> {
    let c_prev = b.slice_channels(h_prev, 0, half)?;
    let f = b.slice_channels(z, 0, half)?;
    let o = b.slice_channels(z, half, half)?;
    let c = gated(b, &c_prev, &f, cand)?;
    let out = b.mul(&o, &c)?;
    b.concat_channels(&[&c, &out])
}
