use crate::geometry::Point;

/// A scalar field that can be evaluated pointwise.
pub trait Field: Sync {
    fn value(&self, p: Point) -> f64;
}

impl<F: Fn(Point) -> f64 + Sync> Field for F {
    fn value(&self, p: Point) -> f64 {
        self(p)
    }
}

/// Field that is zero everywhere.
pub struct Zero;

impl Field for Zero {
    fn value(&self, _p: Point) -> f64 {
        0.0
    }
}
