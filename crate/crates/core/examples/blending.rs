//! The blending dynamics on their own: geometry, transfer and fade.
//!
//! ```text
//! cargo run --example blending
//! ```

use std::f64::consts::PI;

use fungisync::dynamics::{geometry_factor, step_decay, step_transfer, DynamicsParams, Protected};
use fungisync::model::{AgentId, AgentState, ElementKind, Umwelt};
use glam::DVec3;

fn main() {
    let params = DynamicsParams::default();
    let donor_state = AgentState::new(AgentId(2), DVec3::new(0.65, 0.0, 0.0), -DVec3::X);
    let donor = Umwelt::new(AgentId(2), ElementKind::Signal);

    println!("angle    g      I(10 s)  closed form");
    for deg in [0.0, 45.0, 90.0, 135.0, 180.0] {
        let phi = deg * PI / 180.0;
        let me = AgentState::new(AgentId(1), DVec3::ZERO, DVec3::new(phi.cos(), phi.sin(), 0.0));
        let g = geometry_factor(&me, &donor_state, params.g_min);
        let mut u = Umwelt::new(AgentId(1), ElementKind::Water);
        for _ in 0..200 {
            step_transfer(&mut u, &donor, g, &params);
        }
        let i = u.get(ElementKind::Signal).unwrap().intensity;
        let closed = 1.0 - (-params.k_transfer * g * 10.0).exp();
        println!("{deg:5.0}  {g:.3}  {i:.5}  {closed:.5}");
    }

    let mut u = Umwelt::new(AgentId(1), ElementKind::Water);
    for _ in 0..200 {
        step_transfer(&mut u, &donor, 1.0, &params);
    }
    let none = Protected::new();
    let mut t = 0;
    while u.get(ElementKind::Signal).is_some() {
        if t % 100 == 0 {
            let tr = u.get(ElementKind::Signal).unwrap();
            println!("fade {:5.1} s  intensity {:.3}  spread {:.3}", t as f64 * params.dt, tr.intensity, tr.spread);
        }
        step_decay(&mut u, &none, &params);
        t += 1;
    }
    println!("gone after {:.2} s", t as f64 * params.dt);
}
