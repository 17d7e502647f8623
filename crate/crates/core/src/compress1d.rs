//! Width reduction for scalar shallow ReLU networks
//! `f(x) = b + Σ a_k σ(c_k x + d_k)`.
//!
//! Two neurons whose cusps fall in the same gap between consecutive data
//! points and whose `a` and `c` share signs can be replaced by one neuron
//! that agrees with their sum outside the interval between the cusps, so
//! in particular on every data point. Repeating this leaves at most four
//! neurons per interior gap and two per outer region, `4N` in total, while
//! the balanced parameter norm never grows.

use std::fmt::Write as _;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neuron {
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl Neuron {
    pub fn new(a: f64, c: f64, d: f64) -> Self {
        Neuron { a, c, d }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.a * (self.c * x + self.d).max(0.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.a * self.a + self.c * self.c + self.d * self.d
    }

    /// Rescales to `a² = c² + d²` without changing the function.
    pub fn balanced(&self) -> Self {
        let r = self.c.hypot(self.d);
        let s = (r / self.a.abs()).sqrt();
        Neuron {
            a: self.a * s,
            c: self.c / s,
            d: self.d / s,
        }
    }

    fn is_zero(&self) -> bool {
        self.a == 0.0 || (self.c == 0.0 && self.d == 0.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShallowNet1D {
    pub neurons: Vec<Neuron>,
    pub b: f64,
}

impl ShallowNet1D {
    pub fn eval(&self, x: f64) -> f64 {
        self.b + self.neurons.iter().map(|n| n.eval(x)).sum::<f64>()
    }

    pub fn width(&self) -> usize {
        self.neurons.len()
    }

    /// `Σ(a² + c² + d²)`.
    pub fn norm_sq(&self) -> f64 {
        self.neurons.iter().map(Neuron::norm_sq).sum()
    }

    fn ensure_finite(&self) -> Result<()> {
        let ok = self.b.is_finite()
            && self
                .neurons
                .iter()
                .all(|n| n.a.is_finite() && n.c.is_finite() && n.d.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("shallow network"))
        }
    }

    /// Parses a header line `b,<value>` followed by a column header
    /// `a,c,d` and one neuron per row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty network file".into()))?;
        let b = match header.split_once(',') {
            Some(("b", v)) => parse_f64(v)?,
            _ => {
                return Err(Error::Parse(format!(
                    "expected `b,<value>`, got {header:?}"
                )))
            }
        };
        match lines.next() {
            Some("a,c,d") => {}
            other => return Err(Error::Parse(format!("expected `a,c,d`, got {other:?}"))),
        }
        let neurons = lines
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(Error::Parse(format!("expected three fields in {line:?}")));
                }
                Ok(Neuron::new(
                    parse_f64(f[0])?,
                    parse_f64(f[1])?,
                    parse_f64(f[2])?,
                ))
            })
            .collect::<Result<_>>()?;
        let net = ShallowNet1D { neurons, b };
        net.ensure_finite()?;
        Ok(net)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("b,{}\na,c,d\n", self.b);
        for n in &self.neurons {
            let _ = writeln!(s, "{},{},{}", n.a, n.c, n.d);
        }
        s
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
}

/// Balances every neuron and removes those computing the zero function.
pub fn canonicalize(net: &ShallowNet1D) -> ShallowNet1D {
    ShallowNet1D {
        neurons: net
            .neurons
            .iter()
            .filter(|n| !n.is_zero())
            .map(Neuron::balanced)
            .collect(),
        b: net.b,
    }
}

/// Input at which the neuron switches on or off.
pub fn cusp(n: &Neuron) -> Option<f64> {
    (n.c != 0.0).then(|| -n.d / n.c)
}

fn sign_class(n: &Neuron) -> (bool, bool) {
    (n.a > 0.0, n.c > 0.0)
}

/// Solves `ãc̃ = a₁c₁ + a₂c₂`, `ãd̃ = a₁d₁ + a₂d₂`, `ã² = c̃² + d̃²` with
/// `sign ã = sign a₁`.
pub fn merge_pair(n1: &Neuron, n2: &Neuron) -> Result<Neuron> {
    if n1.a.signum() != n2.a.signum() || n1.a == 0.0 || n2.a == 0.0 {
        return Err(Error::SignMismatch(format!(
            "output weights {} and {} differ in sign",
            n1.a, n2.a
        )));
    }
    if n1.c * n2.c < 0.0 {
        return Err(Error::SignMismatch(format!(
            "input weights {} and {} differ in sign",
            n1.c, n2.c
        )));
    }
    let p = n1.a * n1.c + n2.a * n2.c;
    let q = n1.a * n1.d + n2.a * n2.d;
    let a = n1.a.signum() * p.hypot(q).sqrt();
    if a == 0.0 {
        return Ok(Neuron::new(0.0, 0.0, 0.0));
    }
    Ok(Neuron::new(a, p / a, q / a))
}

/// Gap index of `t` among sorted `xs`: the number of data points strictly
/// below `t`, so a cusp sitting on a data point joins the gap to its left.
fn gap(xs: &[f64], t: f64) -> usize {
    xs.partition_point(|&x| x < t)
}

fn dead_on_data(n: &Neuron, xs: &[f64]) -> bool {
    xs.iter().all(|&x| n.c * x + n.d <= 0.0)
}

/// Merges within one bucket until it holds at most `cap` neurons. The pair
/// merged is the lowest-index pair of the most populated sign class.
fn reduce_bucket(mut bucket: Vec<Neuron>, cap: usize) -> Result<Vec<Neuron>> {
    while bucket.len() > cap {
        let mut classes: Vec<((bool, bool), Vec<usize>)> = Vec::new();
        for (i, n) in bucket.iter().enumerate() {
            let key = sign_class(n);
            match classes.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(i),
                None => classes.push((key, vec![i])),
            }
        }
        let (_, idx) = classes
            .iter()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.1[0].cmp(&a.1[0])))
            .expect("nonempty bucket");
        if idx.len() < 2 {
            break;
        }
        let (i, j) = (idx[0], idx[1]);
        let merged = merge_pair(&bucket[i], &bucket[j])?;
        bucket.remove(j);
        if merged.is_zero() {
            bucket.remove(i);
        } else {
            bucket[i] = merged;
        }
    }
    Ok(bucket)
}

/// Compresses `net` to at most `4N` neurons without changing its values on
/// the data points `xs`.
pub fn compress(net: &ShallowNet1D, xs: &[f64]) -> Result<ShallowNet1D> {
    net.ensure_finite()?;
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("data points"));
    }
    let mut xs = xs.to_vec();
    xs.sort_by(f64::total_cmp);
    let canon = canonicalize(net);
    let mut b = canon.b;
    let n = xs.len();
    let mut buckets: Vec<Vec<Neuron>> = vec![Vec::new(); n + 1];
    for neuron in canon.neurons {
        match cusp(&neuron) {
            None => {
                if neuron.d > 0.0 {
                    b += neuron.a * neuron.d;
                }
            }
            Some(t) => {
                if !dead_on_data(&neuron, &xs) {
                    buckets[gap(&xs, t)].push(neuron);
                }
            }
        }
    }
    let mut neurons = Vec::new();
    for (g, bucket) in buckets.into_iter().enumerate() {
        let cap = if g == 0 || g == n { 2 } else { 4 };
        neurons.extend(reduce_bucket(bucket, cap)?);
    }
    Ok(ShallowNet1D { neurons, b })
}
