//! Adaptive Dormand–Prince 5(4) integrator with continuous output and
//! sign-change event location.
//!
//! States are flat `f64` slices so that augmented systems (flow plus
//! weight matrix, flow plus variational block, beam Riccati data) share
//! one stepping loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Hook run after every accepted step. Returns the size of the correction.
    fn project(&self, _y: &mut [f64]) -> f64 {
        0.0
    }
}

/// Step-size control settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { atol: 1e-10, rtol: 1e-9, max_step: f64::INFINITY, max_steps: 200_000 }
    }
}

impl Tolerance {
    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.atol *= factor;
        self.rtol *= factor;
        self
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its interpolation coefficients.
#[derive(Clone, Debug)]
struct Segment {
    t0: f64,
    h: f64,
    // five blocks of length n: y0, dy, bspl, r4, r5
    coeff: Vec<f64>,
}

/// Piecewise quartic continuous extension of an accepted step sequence.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    n: usize,
    t_start: f64,
    t_end: f64,
    y_start: Vec<f64>,
    y_end: Vec<f64>,
    segments: Vec<Segment>,
    pub n_rhs: usize,
    pub max_projection: f64,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn y_start(&self) -> &[f64] {
        &self.y_start
    }

    pub fn y_end(&self) -> &[f64] {
        &self.y_end
    }

    pub fn n_steps(&self) -> usize {
        self.segments.len()
    }

    /// Accepted step boundaries, in integration order.
    pub fn step_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.segments.iter().map(|s| s.t0).collect();
        ts.push(self.t_end);
        ts
    }

    fn forward(&self) -> bool {
        self.t_end >= self.t_start
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.forward() { (self.t_start, self.t_end) } else { (self.t_end, self.t_start) };
        t >= lo && t <= hi
    }

    fn locate(&self, t: f64) -> usize {
        let fwd = self.forward();
        // first segment whose start is beyond t, minus one
        let idx = self.segments.partition_point(|s| if fwd { s.t0 <= t } else { s.t0 >= t });
        idx.saturating_sub(1).min(self.segments.len().saturating_sub(1))
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if t == self.t_end {
            out.copy_from_slice(&self.y_end);
            return;
        }
        if self.segments.is_empty() || t == self.t_start {
            out.copy_from_slice(&self.y_start);
            return;
        }
        let seg = &self.segments[self.locate(t)];
        let n = self.n;
        let th = (t - seg.t0) / seg.h;
        let th1 = 1.0 - th;
        let c = &seg.coeff;
        for i in 0..n {
            out[i] = c[i] + th * (c[n + i] + th1 * (c[2 * n + i] + th * (c[3 * n + i] + th1 * c[4 * n + i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval_into(t, &mut out);
        out
    }
}

/// Sign-change event `g(y) = 0` crossed from `g < 0` to `g > 0`.
pub trait Event {
    fn value(&self, y: &[f64]) -> f64;
    /// `dg/dt` given the state and its time derivative.
    fn rate(&self, y: &[f64], dy: &[f64]) -> f64;
}

#[derive(Clone, Debug)]
pub struct EventHit {
    pub t: f64,
    pub y: Vec<f64>,
    pub rate: f64,
    pub residual: f64,
}

struct Stepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    n: usize,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    n_rhs: usize,
}

impl<'a, S: OdeSystem + ?Sized> Stepper<'a, S> {
    fn new(sys: &'a S) -> Self {
        let n = sys.dim();
        Stepper { sys, n, k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n], n_rhs: 0 }
    }

    fn f(&mut self, t: f64, y: &[f64], slot: usize) {
        let mut out = std::mem::take(&mut self.k[slot]);
        self.sys.rhs(t, y, &mut out);
        self.k[slot] = out;
        self.n_rhs += 1;
    }

    /// Stages 2..7 given k[0] = f(t, y). Writes the 5th-order result to `ynew`
    /// and returns the scaled error norm.
    fn step(&mut self, t: f64, y: &[f64], h: f64, ynew: &mut [f64], tol: &Tolerance) -> f64 {
        let n = self.n;
        macro_rules! stage {
            ($slot:expr, $c:expr, $( ($a:expr, $j:expr) ),+ ) => {{
                for i in 0..n {
                    self.tmp[i] = y[i] + h * (0.0 $( + $a * self.k[$j][i] )+);
                }
                let tmp = std::mem::take(&mut self.tmp);
                self.f(t + $c * h, &tmp, $slot);
                self.tmp = tmp;
            }};
        }
        stage!(1, C2, (A21, 0));
        stage!(2, C3, (A31, 0), (A32, 1));
        stage!(3, C4, (A41, 0), (A42, 1), (A43, 2));
        stage!(4, C5, (A51, 0), (A52, 1), (A53, 2), (A54, 3));
        stage!(5, 1.0, (A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4));
        for i in 0..n {
            ynew[i] = y[i]
                + h * (A71 * self.k[0][i] + A73 * self.k[2][i] + A74 * self.k[3][i] + A75 * self.k[4][i] + A76 * self.k[5][i]);
        }
        let ynew_owned = ynew.to_vec();
        self.f(t + h, &ynew_owned, 6);
        let mut acc = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * self.k[0][i] + E3 * self.k[2][i] + E4 * self.k[3][i] + E5 * self.k[4][i] + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let sc = tol.atol + tol.rtol * y[i].abs().max(ynew[i].abs());
            acc += (e / sc) * (e / sc);
        }
        (acc / n as f64).sqrt()
    }

    fn segment(&self, t0: f64, h: f64, y: &[f64], ynew: &[f64]) -> Segment {
        let n = self.n;
        let mut coeff = vec![0.0; 5 * n];
        for i in 0..n {
            let ydiff = ynew[i] - y[i];
            let bspl = h * self.k[0][i] - ydiff;
            coeff[i] = y[i];
            coeff[n + i] = ydiff;
            coeff[2 * n + i] = bspl;
            coeff[3 * n + i] = ydiff - h * self.k[6][i] - bspl;
            coeff[4 * n + i] = h
                * (D1 * self.k[0][i] + D3 * self.k[2][i] + D4 * self.k[3][i] + D5 * self.k[4][i] + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
        }
        Segment { t0, h, coeff }
    }

    fn initial_step(&mut self, t: f64, y: &[f64], dir: f64, tol: &Tolerance) -> f64 {
        let n = self.n;
        let (mut d0, mut d1) = (0.0, 0.0);
        for i in 0..n {
            let sc = tol.atol + tol.rtol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (self.k[0][i] / sc).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(tol.max_step);
        let y1: Vec<f64> = (0..n).map(|i| y[i] + dir * h0 * self.k[0][i]).collect();
        self.f(t + dir * h0, &y1, 1);
        let mut d2 = 0.0;
        for i in 0..n {
            let sc = tol.atol + tol.rtol * y[i].abs();
            d2 += ((self.k[1][i] - self.k[0][i]) / sc).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(tol.max_step)
    }
}

/// Integrates from `t0` to `t1` (either direction).
pub fn solve<S: OdeSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], t1: f64, tol: &Tolerance) -> Result<DenseSolution> {
    run(sys, t0, y0, t1, tol, None).map(|(sol, _)| sol)
}

/// Integrates until the event fires or `t_limit` is reached.
pub fn solve_until<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_limit: f64,
    tol: &Tolerance,
    event: &dyn Event,
) -> Result<(DenseSolution, Option<EventHit>)> {
    run(sys, t0, y0, t_limit, tol, Some(event))
}

/// A single explicit step of size `h` from `(t, y)`; used to polish event times.
pub fn single_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], h: f64) -> Vec<f64> {
    let mut st = Stepper::new(sys);
    st.f(t, y, 0);
    let mut out = vec![0.0; y.len()];
    if h != 0.0 {
        st.step(t, y, h, &mut out, &Tolerance::default());
    } else {
        out.copy_from_slice(y);
    }
    out
}

const EVENT_SAMPLES: usize = 8;

fn run<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t1: f64,
    tol: &Tolerance,
    event: Option<&dyn Event>,
) -> Result<(DenseSolution, Option<EventHit>)> {
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Invalid(format!("state length {} does not match system dimension {n}", y0.len())));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integrator { t: t0, reason: "non-finite initial state".into() });
    }
    let mut sol = DenseSolution {
        n,
        t_start: t0,
        t_end: t0,
        y_start: y0.to_vec(),
        y_end: y0.to_vec(),
        segments: Vec::new(),
        n_rhs: 0,
        max_projection: 0.0,
    };
    if t1 == t0 {
        return Ok((sol, None));
    }
    let dir = (t1 - t0).signum();
    let mut st = Stepper::new(sys);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut ynew = vec![0.0; n];
    st.f(t, &y, 0);

    let mut armed = false;
    let mut g_prev = 0.0;
    if let Some(ev) = event {
        g_prev = ev.value(&y);
        let rate = ev.rate(&y, &st.k[0]) * dir;
        armed = g_prev < -1e-12 || (g_prev <= 1e-12 && rate < 0.0);
        if armed {
            g_prev = g_prev.min(0.0);
        }
    }

    let mut h = st.initial_step(t, &y, dir, tol);
    let mut steps = 0usize;
    let mut reject_streak = 0usize;
    loop {
        if steps >= tol.max_steps {
            return Err(Error::Integrator { t, reason: format!("step budget of {} exhausted", tol.max_steps) });
        }
        let remaining = (t1 - t).abs();
        let mut last = false;
        if h >= remaining * (1.0 - 1e-13) {
            h = remaining;
            last = true;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integrator { t, reason: "step size underflow".into() });
        }
        let err = st.step(t, &y, dir * h, &mut ynew, tol);
        if !err.is_finite() {
            h *= 0.2;
            reject_streak += 1;
            if reject_streak > 60 {
                return Err(Error::Integrator { t, reason: "non-finite derivative".into() });
            }
            continue;
        }
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            reject_streak += 1;
            continue;
        }
        reject_streak = 0;
        steps += 1;
        let t_new = if last { t1 } else { t + dir * h };
        let seg = st.segment(t, dir * h, &y, &ynew);

        if let Some(ev) = event {
            if let Some(hit) = scan_event(sys, ev, &seg, &y, t, n, &mut armed, &mut g_prev)? {
                sol.segments.push(seg);
                sol.t_end = hit.t;
                sol.y_end = hit.y.clone();
                sol.n_rhs = st.n_rhs;
                return Ok((sol, Some(hit)));
            }
        }

        sol.segments.push(seg);
        let proj = sys.project(&mut ynew);
        if proj > sol.max_projection {
            sol.max_projection = proj;
        }
        t = t_new;
        std::mem::swap(&mut y, &mut ynew);
        if proj > 0.0 {
            st.f(t, &y, 0);
        } else {
            st.k.swap(0, 6);
        }
        if last {
            break;
        }
        let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
        h = (h * fac).min(tol.max_step);
    }
    sol.t_end = t1;
    sol.y_end = y;
    sol.n_rhs = st.n_rhs;
    Ok((sol, None))
}

fn seg_eval(seg: &Segment, n: usize, t: f64, out: &mut [f64]) {
    let th = (t - seg.t0) / seg.h;
    let th1 = 1.0 - th;
    let c = &seg.coeff;
    for i in 0..n {
        out[i] = c[i] + th * (c[n + i] + th1 * (c[2 * n + i] + th * (c[3 * n + i] + th1 * c[4 * n + i])));
    }
}

#[allow(clippy::too_many_arguments)]
fn scan_event<S: OdeSystem + ?Sized>(
    sys: &S,
    ev: &dyn Event,
    seg: &Segment,
    y_step: &[f64],
    t_step: f64,
    n: usize,
    armed: &mut bool,
    g_prev: &mut f64,
) -> Result<Option<EventHit>> {
    let mut buf = vec![0.0; n];
    let mut th_prev = 0.0;
    for j in 1..=EVENT_SAMPLES {
        let th = j as f64 / EVENT_SAMPLES as f64;
        seg_eval(seg, n, seg.t0 + th * seg.h, &mut buf);
        let g = ev.value(&buf);
        if !*armed {
            if g < 0.0 {
                *armed = true;
            }
        } else if *g_prev <= 0.0 && g > 0.0 {
            return polish_event(sys, ev, seg, y_step, t_step, n, th_prev, th).map(Some);
        }
        *g_prev = g;
        th_prev = th;
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn polish_event<S: OdeSystem + ?Sized>(
    sys: &S,
    ev: &dyn Event,
    seg: &Segment,
    y_step: &[f64],
    t_step: f64,
    n: usize,
    mut lo: f64,
    mut hi: f64,
) -> Result<EventHit> {
    let mut buf = vec![0.0; n];
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        seg_eval(seg, n, seg.t0 + mid * seg.h, &mut buf);
        if ev.value(&buf) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut th = 0.5 * (lo + hi);
    let mut dy = vec![0.0; n];
    let mut y = single_step(sys, t_step, y_step, th * seg.h);
    let mut g = ev.value(&y);
    for _ in 0..20 {
        sys.rhs(t_step + th * seg.h, &y, &mut dy);
        let rate = ev.rate(&y, &dy);
        if rate == 0.0 {
            break;
        }
        let dth = -g / (rate * seg.h);
        th += dth;
        y = single_step(sys, t_step, y_step, th * seg.h);
        g = ev.value(&y);
        if g.abs() < 1e-14 || dth.abs() < 1e-16 {
            break;
        }
    }
    sys.rhs(t_step + th * seg.h, &y, &mut dy);
    let rate = ev.rate(&y, &dy);
    Ok(EventHit { t: t_step + th * seg.h, y, rate, residual: g.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    struct Crossing(f64);
    impl Event for Crossing {
        fn value(&self, y: &[f64]) -> f64 {
            y[0] - self.0
        }
        fn rate(&self, _y: &[f64], dy: &[f64]) -> f64 {
            dy[0]
        }
    }

    #[test]
    fn oscillator_end_state() {
        let sol = solve(&Oscillator, 0.0, &[0.0, 1.0], 10.0, &Tolerance::default()).unwrap();
        let y = sol.y_end();
        assert!((y[0] - 10f64.sin()).abs() < 1e-8);
        assert!((y[1] - 10f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_between_steps() {
        let sol = solve(&Oscillator, 0.0, &[0.0, 1.0], 6.0, &Tolerance::default()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=600 {
            let t = i as f64 * 0.01;
            let y = sol.eval(t);
            worst = worst.max((y[0] - t.sin()).abs()).max((y[1] - t.cos()).abs());
        }
        assert!(worst < 1e-8, "dense error {worst}");
    }

    #[test]
    fn backward_integration() {
        let sol = solve(&Oscillator, 3.0, &[3f64.sin(), 3f64.cos()], -1.0, &Tolerance::default()).unwrap();
        let y = sol.eval(0.5);
        assert!((y[0] - 0.5f64.sin()).abs() < 1e-8);
        assert!((sol.y_end()[1] - (-1f64).cos()).abs() < 1e-8);
    }

    #[test]
    fn event_is_polished() {
        // sin t crosses 0.5 upward at t = pi/6 after starting below it
        let (_sol, hit) =
            solve_until(&Oscillator, 0.0, &[0.0, 1.0], 5.0, &Tolerance::default(), &Crossing(0.5)).unwrap();
        let hit = hit.unwrap();
        assert!((hit.t - std::f64::consts::FRAC_PI_6).abs() < 1e-10);
        assert!(hit.residual < 1e-12);
    }

    #[test]
    fn step_budget_reported() {
        let tol = Tolerance { max_steps: 3, ..Tolerance::default() };
        let err = solve(&Oscillator, 0.0, &[0.0, 1.0], 100.0, &tol).unwrap_err();
        assert!(matches!(err, Error::Integrator { .. }));
    }
}
