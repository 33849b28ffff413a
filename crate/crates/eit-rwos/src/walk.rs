//! The Markov chain: centered and uncentered sphere exits in the bulk,
//! finite-difference replacement in the boundary layer (partial reflection
//! with absorption), transmission replacement in the interface layer, and
//! the trajectory driver.

use crate::geometry::{Circle, CircleRole, Point, Region, SceneGeometry, Vec2};
use crate::medium::{ForwardModel, MediumRealization};
use crate::streams::Stream;

/// Bulk step sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// Jump to a uniform point on the largest sphere centered at the walker.
    Centered,
    /// Exact exit from the largest disk inscribed in the current layer.
    Uncentered,
}

/// Step-size assignment on the two sides of the conductivity interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterfaceScheme {
    /// Steps h/kappa (opposite side): side probabilities 1/2 each.
    EqualFlux,
    /// Equal steps h: side probability proportional to kappa.
    EqualStep,
    /// Steps h/sqrt(kappa) (opposite side): probability prop. to sqrt(kappa).
    SqrtScaled,
}

/// Chain state space with respect to the inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    /// Absorbed on first entry into the inclusion layer.
    DirectChain,
    /// Spheres ignore the inclusion; the chain is stopped and its first
    /// entry into the inclusion (or its layer) recorded.
    ThroughChain,
}

/// Quantity scored along the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// CEM data, inclusion grounded at 0.
    U0,
    /// Zero boundary data, inclusion at 1.
    U1,
    /// CEM data on the inclusion-free model (control variate).
    V,
    /// Robin data on the whole boundary.
    IdealizedPotential,
}

#[derive(Debug, Clone, Copy)]
pub struct WalkParams {
    /// Nominal finite-difference step.
    pub h: f64,
    /// Boundary/interface/inclusion layer width.
    pub eps: f64,
    pub sampler: Sampler,
    pub interface_scheme: InterfaceScheme,
    pub chain_mode: ChainMode,
    pub max_steps: u64,
}

impl WalkParams {
    /// Defaults: eps = min(1e-6, h^3), centered sampler, equal-step
    /// interface scheme, direct chain.
    pub fn new(h: f64) -> WalkParams {
        assert!(h > 0.0, "step size must be positive");
        WalkParams {
            h,
            eps: 1e-6f64.min(h * h * h),
            sampler: Sampler::Centered,
            interface_scheme: InterfaceScheme::EqualStep,
            chain_mode: ChainMode::DirectChain,
            max_steps: 10_000_000,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> WalkParams {
        assert!(eps > 0.0);
        self.eps = eps;
        self
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> WalkParams {
        self.sampler = sampler;
        self
    }

    pub fn with_scheme(mut self, scheme: InterfaceScheme) -> WalkParams {
        self.interface_scheme = scheme;
        self
    }

    pub fn with_chain(mut self, mode: ChainMode) -> WalkParams {
        self.chain_mode = mode;
        self
    }
}

/// Result of one boundary-layer replacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplacementAction {
    /// Trajectory ends; `score` is the per-visit score of this final visit.
    Absorb { score: f64, electrode: Option<usize> },
    /// Trajectory continues at `to`; `score` is the per-visit score.
    Move { to: Point, score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    AbsorbedAtElectrode { electrode: Option<usize>, point: Point },
    /// Carries the projection of the hitting point onto the inclusion circle.
    HitInclusion(Point),
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOutcome {
    /// Sum of per-visit boundary scores.
    pub score_sum: f64,
    pub terminal: Terminal,
    pub boundary_hits: u64,
    pub steps: u64,
}

/// Uniform point on the sphere of given radius around `p`.
pub fn sphere_exit_centered(p: &Point, radius: f64, rng: &mut Stream) -> Point {
    assert!(radius > 0.0);
    let v = rng.isotropic_unit_vector();
    *p + v.scale(radius)
}

/// Exit angle of Brownian motion from the unit-radius disk started at
/// relative radius `r` and angle `theta`, driven by the uniform variate `u`.
///
/// Inverse CDF of the Poisson kernel; u = 0.5 maps to the antipode.
pub fn uncentered_exit_angle(r: f64, theta: f64, u: f64) -> f64 {
    if u == 0.5 {
        return theta + std::f64::consts::PI;
    }
    theta + 2.0 * (((1.0 - r) / (1.0 + r)) * (std::f64::consts::PI * u).tan()).atan()
}

/// Exact exit position of Brownian motion from `disk` started at `p`.
pub fn sphere_exit_uncentered(disk: &Circle, p: &Point, rng: &mut Stream) -> Point {
    let rel = Vec2 { x: p.x - disk.center.x, y: p.y - disk.center.y };
    let r = (rel.x * rel.x + rel.y * rel.y).sqrt() / disk.radius;
    assert!(r < 1.0, "uncentered exit requires a strictly interior start");
    let theta = rel.y.atan2(rel.x);
    let alpha = uncentered_exit_angle(r, theta, rng.uniform());
    Point {
        x: disk.center.x + disk.radius * alpha.cos(),
        y: disk.center.y + disk.radius * alpha.sin(),
    }
}

/// Per-visit score, absorption probability and single-diagonal reflection
/// probability of the boundary replacement: s = h g/(f h + z),
/// p_a = f h/(f h + z), p_r = z/(2(f h + z)).
pub fn replacement_weights(f: f64, h: f64, z: f64, g: f64) -> (f64, f64, f64) {
    let d = f * h + z;
    (h * g / d, f * h / d, z / (2.0 * d))
}

/// Step sizes (outer, inner) and the outer-side probability of the
/// interface replacement for the given scheme.
pub fn interface_weights(
    scheme: InterfaceScheme,
    kappa_out: f64,
    kappa_in: f64,
    h: f64,
) -> (f64, f64, f64) {
    let (h_out, h_in) = match scheme {
        // Cross-assigned: the step on one side scales with the conductivity
        // of the other, making the side probabilities exactly 1/2.
        InterfaceScheme::EqualFlux => (h / kappa_in, h / kappa_out),
        InterfaceScheme::EqualStep => (h, h),
        InterfaceScheme::SqrtScaled => (h / kappa_in.sqrt(), h / kappa_out.sqrt()),
    };
    let p_outer = kappa_out * h_in / (kappa_out * h_in + kappa_in * h_out);
    (h_out, h_in, p_outer)
}

/// Largest sphere radius stencil points may use without crossing a circle:
/// keep within the closed disk and outside the outermost interior circle.
fn stencil_fits(scene: &SceneGeometry, through: bool, points: &[Point]) -> bool {
    let outer = scene.outer().radius;
    let inner = scene
        .interface()
        .map(|c| c.radius)
        .or_else(|| if through { None } else { scene.inclusion().map(|c| c.radius) });
    points.iter().all(|q| {
        let d = q.norm();
        d <= outer && inner.map_or(true, |r| d >= r)
    })
}

/// Finite-difference replacement in the boundary layer.
///
/// The stencil is anchored at the walker: diagonal points p + h'(n ± t) and
/// the depth point p + 2h'n, with h' halved until all stay within the outer
/// layer. With boundary data z kappa d_nu u + f u = g the effective
/// impedance is z_eff = z * kappa_outer.
pub fn boundary_replacement(
    p: &Point,
    scene: &SceneGeometry,
    model: &ForwardModel,
    realization: &MediumRealization,
    params: &WalkParams,
    kind: ScoreKind,
    rng: &mut Stream,
) -> ReplacementAction {
    debug_assert_eq!(scene.classify(p), Region::BoundaryLayer);
    let frame = scene
        .project_with_frame(p, CircleRole::Outer)
        .expect("boundary-layer point is off-center");
    let theta = frame.foot.angle();
    let (f, g_data) = model.bc.boundary_fg(theta);
    let g = if kind == ScoreKind::U1 { 0.0 } else { g_data };
    let z_eff = model.bc.contact_impedance() * realization.kappa_outer;
    let through = params.chain_mode == ChainMode::ThroughChain;

    let mut hp = params.h;
    let mut fitted = false;
    for _ in 0..=6 {
        let targets = stencil_targets(p, &frame.inward, &frame.tangent, hp);
        if stencil_fits(scene, through, &targets) {
            fitted = true;
            break;
        }
        hp /= 2.0;
    }
    if !fitted {
        // Give up on this visit: nudge radially to depth eps/2 and re-enter
        // the loop from a clean position.
        let r = scene.outer().radius - params.eps / 2.0;
        let u = p.norm();
        let to = if u > 0.0 {
            Point { x: p.x / u * r, y: p.y / u * r }
        } else {
            Point { x: r, y: 0.0 }
        };
        return ReplacementAction::Move { to, score: 0.0 };
    }

    let (score, p_a, _p_r) = replacement_weights(f, hp, z_eff, g);
    let [diag_plus, diag_minus, _] = stencil_targets_array(p, &frame.inward, &frame.tangent, hp);
    let u = rng.uniform();
    if u < p_a {
        return ReplacementAction::Absorb {
            score,
            electrode: model.bc.electrode_at(theta),
        };
    }
    // Remaining mass splits equally between the two diagonal moves.
    let to = if u < p_a + (1.0 - p_a) / 2.0 { diag_plus } else { diag_minus };
    ReplacementAction::Move { to, score }
}

fn stencil_targets(p: &Point, n: &Vec2, t: &Vec2, h: f64) -> Vec<Point> {
    stencil_targets_array(p, n, t, h).to_vec()
}

fn stencil_targets_array(p: &Point, n: &Vec2, t: &Vec2, h: f64) -> [Point; 3] {
    [
        *p + (*n + *t).scale(h),
        *p + (*n - *t).scale(h),
        *p + n.scale(2.0 * h),
    ]
}

/// Transmission replacement in the interface layer: jump from the foot of
/// the walker to a diagonal point on one of the two sides, with the side
/// chosen proportionally to kappa * (opposite step).
pub fn interface_replacement(
    p: &Point,
    scene: &SceneGeometry,
    realization: &MediumRealization,
    params: &WalkParams,
    rng: &mut Stream,
) -> Point {
    debug_assert_eq!(scene.classify(p), Region::InterfaceLayer);
    let frame = scene
        .project_with_frame(p, CircleRole::Interface)
        .expect("interface-layer point is off-center");
    // `inward` points away from the interface circle's center, i.e. into
    // the outer layer.
    let n_out = frame.inward;
    let t = frame.tangent;
    let (mut h_out, mut h_in, p_outer) = interface_weights(
        params.interface_scheme,
        realization.kappa_outer,
        realization.kappa_inner,
        params.h,
    );
    // Joint shrink, preserving the step ratio, until no circle is crossed.
    for _ in 0..64 {
        let outer_pts = [
            frame.foot + (n_out + t).scale(h_out),
            frame.foot + (n_out - t).scale(h_out),
        ];
        let inner_pts = [
            frame.foot + (t - n_out).scale(h_in),
            frame.foot + (n_out + t).scale(-h_in),
        ];
        let outer_ok = outer_pts.iter().all(|q| q.norm() <= scene.outer().radius);
        let inner_ok = inner_pts
            .iter()
            .all(|q| scene.inclusion().map_or(true, |c| q.norm() >= c.radius));
        if outer_ok && inner_ok {
            break;
        }
        h_out /= 2.0;
        h_in /= 2.0;
    }
    let u = rng.uniform();
    let (step, side, split) = if u < p_outer {
        (h_out, n_out, u / p_outer)
    } else {
        (h_in, n_out.scale(-1.0), (u - p_outer) / (1.0 - p_outer))
    };
    let diag = if split < 0.5 { side + t } else { side - t };
    frame.foot + diag.scale(step)
}

/// Inscribed disk of the current layer through `p` for the uncentered
/// sampler: ray-aligned between the bracketing circles, or the full layer
/// disk when no circle separates `p` from the center.
fn layer_disk(scene: &SceneGeometry, p: &Point, through: bool) -> Circle {
    let d = p.norm();
    let mut inner = 0.0f64;
    let mut outer = scene.outer().radius;
    let mut consider = |r: f64| {
        if r <= d && r > inner {
            inner = r;
        }
        if r > d && r < outer {
            outer = r;
        }
    };
    if let Some(c) = scene.interface() {
        consider(c.radius);
    }
    if !through {
        if let Some(c) = scene.inclusion() {
            consider(c.radius);
        }
    }
    if inner == 0.0 {
        Circle { center: Point { x: 0.0, y: 0.0 }, radius: outer }
    } else {
        let mid = (inner + outer) / 2.0;
        Circle {
            center: Point { x: p.x / d * mid, y: p.y / d * mid },
            radius: (outer - inner) / 2.0,
        }
    }
}

/// Realized scene with the layer width of the walk, not of the model.
fn scene_with_eps(
    model: &ForwardModel,
    realization: &MediumRealization,
    eps: f64,
) -> SceneGeometry {
    let base = model.scene_for(realization);
    SceneGeometry::new(
        *base.outer(),
        base.inclusion().copied(),
        base.interface().copied(),
        eps,
    )
    .expect("walk eps must keep circle layers disjoint")
}

/// Run one trajectory from `start` and accumulate its boundary scores.
///
/// Direct chains treat the inclusion layer as absorbing; through chains
/// ignore the inclusion for sphere radii and stop at their first entry into
/// the inclusion or its layer, reporting the projected hitting point.
pub fn simulate(
    start: &Point,
    model: &ForwardModel,
    realization: &MediumRealization,
    params: &WalkParams,
    kind: ScoreKind,
    rng: &mut Stream,
) -> TrajectoryOutcome {
    let scene = scene_with_eps(model, realization, params.eps);
    let through = params.chain_mode == ChainMode::ThroughChain;
    let mut x = *start;
    let mut score_sum = 0.0;
    let mut boundary_hits = 0u64;
    let mut steps = 0u64;
    loop {
        if steps >= params.max_steps {
            return TrajectoryOutcome {
                score_sum,
                terminal: Terminal::Censored,
                boundary_hits,
                steps,
            };
        }
        match scene.classify(&x) {
            Region::BoundaryLayer => {
                boundary_hits += 1;
                steps += 1;
                match boundary_replacement(&x, &scene, model, realization, params, kind, rng) {
                    ReplacementAction::Absorb { score, electrode } => {
                        score_sum += score;
                        let foot = scene.project_with_frame(&x, CircleRole::Outer).expect("layer point is off-center").foot;
                        return TrajectoryOutcome {
                            score_sum,
                            terminal: Terminal::AbsorbedAtElectrode { electrode, point: foot },
                            boundary_hits,
                            steps,
                        };
                    }
                    ReplacementAction::Move { to, score } => {
                        score_sum += score;
                        x = to;
                    }
                }
            }
            Region::InclusionLayer | Region::InsideInclusion => {
                let foot = scene.project_with_frame(&x, CircleRole::Inclusion).expect("layer point is off-center").foot;
                return TrajectoryOutcome {
                    score_sum,
                    terminal: Terminal::HitInclusion(foot),
                    boundary_hits,
                    steps,
                };
            }
            Region::InterfaceLayer => {
                steps += 1;
                x = interface_replacement(&x, &scene, realization, params, rng);
            }
            Region::BulkOuter | Region::BulkInner => {
                steps += 1;
                x = match params.sampler {
                    Sampler::Centered => {
                        let r = if through {
                            scene.walk_radius_through(&x)
                        } else {
                            scene.walk_radius(&x)
                        };
                        sphere_exit_centered(&x, r, rng)
                    }
                    Sampler::Uncentered => {
                        let disk = layer_disk(&scene, &x, through);
                        sphere_exit_uncentered(&disk, &x, rng)
                    }
                };
            }
        }
    }
}
