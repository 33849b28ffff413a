//! Concentric-circle scene description: region classification into
//! epsilon-layers and bulk, walk-sphere radii, projections and local frames.

use thiserror::Error;

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Polar angle in (-pi, pi].
    pub fn angle(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl std::ops::Add<Vec2> for Point {
    type Output = Point;
    fn add(self, v: Vec2) -> Point {
        Point::new(self.x + v.x, self.y + v.y)
    }
}

/// A direction / displacement in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn scale(&self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(GeometryError::NonPositiveRadius(radius));
        }
        Ok(Circle { center, radius })
    }

    /// Unsigned distance from `p` to the circle line.
    pub fn dist_to(&self, p: &Point) -> f64 {
        (p.dist(&self.center) - self.radius).abs()
    }
}

/// Which concentric circle of the scene an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircleRole {
    Outer,
    Inclusion,
    Interface,
}

/// Classification of a point of the closed disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    BulkOuter,
    BulkInner,
    BoundaryLayer,
    InclusionLayer,
    InterfaceLayer,
    InsideInclusion,
}

impl Region {
    pub fn is_bulk(&self) -> bool {
        matches!(self, Region::BulkOuter | Region::BulkInner)
    }
}

/// Local frame at the radial projection of a point onto a scene circle.
///
/// `inward` points into the region where the walk lives (toward the center
/// for the outer boundary, away from the inclusion); `tangent` points
/// counterclockwise around the circle.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub foot: Point,
    pub inward: Vec2,
    pub tangent: Vec2,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("circle radius must be strictly positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("inner circles must be strictly inside the outer circle and concentric with it")]
    NotConcentric,
    #[error("inclusion radius {0} must be smaller than interface radius {1}")]
    InclusionOutsideInterface(f64, f64),
    #[error("epsilon {eps} too large: layers of circles with gap {gap} would intersect")]
    LayersIntersect { eps: f64, gap: f64 },
    #[error("projection undefined: point coincides with the scene center")]
    ProjectionAtCenter,
}

/// The concentric disk world: outer disk, optional inclusion, optional
/// layer interface, and the epsilon-layer thickness.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    outer: Circle,
    inclusion: Option<Circle>,
    interface: Option<Circle>,
    eps: f64,
}

const CONCENTRIC_TOL: f64 = 1e-12;

impl SceneGeometry {
    pub fn new(
        outer: Circle,
        inclusion: Option<Circle>,
        interface: Option<Circle>,
        eps: f64,
    ) -> Result<Self, GeometryError> {
        for c in [&inclusion, &interface].into_iter().flatten() {
            if c.center.dist(&outer.center) > CONCENTRIC_TOL || c.radius >= outer.radius {
                return Err(GeometryError::NotConcentric);
            }
        }
        if let (Some(t), Some(s)) = (&inclusion, &interface) {
            if t.radius >= s.radius {
                return Err(GeometryError::InclusionOutsideInterface(t.radius, s.radius));
            }
        }
        let scene = SceneGeometry { outer, inclusion, interface, eps };
        let gap = scene.min_gap();
        // Disjoint epsilon-layers: eps < half the smallest gap between circles.
        if !(eps > 0.0) || eps >= gap / 2.0 {
            return Err(GeometryError::LayersIntersect { eps, gap });
        }
        Ok(scene)
    }

    /// Unit disk with optional concentric inclusion / interface radii.
    pub fn concentric(
        outer_radius: f64,
        inclusion_radius: Option<f64>,
        interface_radius: Option<f64>,
        eps: f64,
    ) -> Result<Self, GeometryError> {
        let o = Point::new(0.0, 0.0);
        let mk = |r| Circle::new(o, r);
        SceneGeometry::new(
            mk(outer_radius)?,
            inclusion_radius.map(mk).transpose()?,
            interface_radius.map(mk).transpose()?,
            eps,
        )
    }

    pub fn outer(&self) -> &Circle {
        &self.outer
    }

    pub fn inclusion(&self) -> Option<&Circle> {
        self.inclusion.as_ref()
    }

    pub fn interface(&self) -> Option<&Circle> {
        self.interface.as_ref()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn center(&self) -> Point {
        self.outer.center
    }

    /// Scene with the inclusion removed (control-variate companion problem).
    pub fn without_inclusion(&self) -> SceneGeometry {
        SceneGeometry { inclusion: None, ..self.clone() }
    }

    /// Smallest gap between any two scene circles (center counts as radius 0).
    pub fn min_gap(&self) -> f64 {
        let mut radii: Vec<f64> = vec![0.0, self.outer.radius];
        if let Some(t) = &self.inclusion {
            radii.push(t.radius);
        }
        if let Some(s) = &self.interface {
            radii.push(s.radius);
        }
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        radii.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    fn radial(&self, p: &Point) -> f64 {
        p.dist(&self.outer.center)
    }

    /// Region tag of `p`. Layer tags take precedence over bulk tags.
    ///
    /// Points marginally outside the outer circle (up to `eps`) are treated
    /// as boundary-layer points; see [`clamp_inside`](Self::clamp_inside).
    pub fn classify(&self, p: &Point) -> Region {
        let d = self.radial(p);
        if let Some(t) = &self.inclusion {
            if d <= t.radius - self.eps {
                return Region::InsideInclusion;
            }
            if (d - t.radius).abs() <= self.eps {
                return Region::InclusionLayer;
            }
        }
        if (d - self.outer.radius).abs() <= self.eps || d > self.outer.radius {
            return Region::BoundaryLayer;
        }
        if let Some(s) = &self.interface {
            if (d - s.radius).abs() <= self.eps {
                return Region::InterfaceLayer;
            }
            if d < s.radius {
                return Region::BulkInner;
            }
        }
        Region::BulkOuter
    }

    /// Radially clamp a point that escaped the closed disk by rounding.
    pub fn clamp_inside(&self, p: Point) -> Point {
        let d = self.radial(&p);
        if d > self.outer.radius {
            let s = self.outer.radius / d;
            let c = self.outer.center;
            Point::new(c.x + (p.x - c.x) * s, c.y + (p.y - c.y) * s)
        } else {
            p
        }
    }

    /// Radius of the largest disk about a bulk point that crosses no circle.
    pub fn walk_radius(&self, p: &Point) -> f64 {
        let d = self.radial(p);
        let mut r = self.outer.radius - d;
        if let Some(t) = &self.inclusion {
            r = r.min((d - t.radius).abs());
        }
        if let Some(s) = &self.interface {
            r = r.min((d - s.radius).abs());
        }
        debug_assert!(r > 0.0, "walk_radius called outside bulk");
        r
    }

    /// Like [`walk_radius`](Self::walk_radius) but ignoring the inclusion
    /// (state space of the through-walk chain).
    pub fn walk_radius_through(&self, p: &Point) -> f64 {
        let d = self.radial(p);
        let mut r = self.outer.radius - d;
        if let Some(s) = &self.interface {
            r = r.min((d - s.radius).abs());
        }
        r
    }

    /// Radial projection of `p` onto the circle in `role`, with the local
    /// frame used by the replacement stencils.
    pub fn project_with_frame(&self, p: &Point, role: CircleRole) -> Result<Frame, GeometryError> {
        let circle = match role {
            CircleRole::Outer => &self.outer,
            CircleRole::Inclusion => self.inclusion.as_ref().expect("no inclusion in scene"),
            CircleRole::Interface => self.interface.as_ref().expect("no interface in scene"),
        };
        let c = circle.center;
        let d = p.dist(&c);
        if d == 0.0 {
            return Err(GeometryError::ProjectionAtCenter);
        }
        // Outward radial unit vector at the foot point.
        let u = Vec2::new((p.x - c.x) / d, (p.y - c.y) / d);
        let foot = Point::new(c.x + u.x * circle.radius, c.y + u.y * circle.radius);
        let inward = match role {
            // Into the disk from the outer boundary, away from the inclusion.
            CircleRole::Outer => u.scale(-1.0),
            CircleRole::Inclusion | CircleRole::Interface => u,
        };
        // Counterclockwise tangent, independent of the normal side.
        let tangent = Vec2::new(-u.y, u.x);
        Ok(Frame { foot, inward, tangent })
    }
}
