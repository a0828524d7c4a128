//! Synthetic bouncing-ball videos: equal-mass disks with elastic wall and
//! pairwise collisions, rasterized to binary frames.

use super::SequenceBatch;
use crate::error::{Result, TsbnError};
use crate::numeric::RngStream;
use crate::params::Likelihood;
use ndarray::Array2;
use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct BallsConfig {
    pub num_balls: usize,
    /// Frame resolution R; frames are R*R binary pixels.
    pub resolution: usize,
    pub sequence_length: usize,
    pub num_sequences: usize,
    /// Disk radius in pixels.
    pub ball_radius: f64,
    /// Ball speeds are drawn uniformly from [0.5, 1.5] * speed_scale
    /// pixels per step, with a uniform random direction.
    pub speed_scale: f64,
    pub seed: u64,
}

impl Default for BallsConfig {
    fn default() -> Self {
        BallsConfig {
            num_balls: 3,
            resolution: 30,
            sequence_length: 100,
            num_sequences: 1,
            ball_radius: 2.0,
            speed_scale: 1.0,
            seed: 0,
        }
    }
}

impl BallsConfig {
    /// Default radius for a resolution: 2 px at 30x30, scaled
    /// proportionally.
    pub fn default_radius(resolution: usize) -> f64 {
        resolution as f64 / 15.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_balls == 0 || self.resolution == 0 || self.sequence_length == 0 {
            return Err(TsbnError::InvalidConfig(
                "num_balls, resolution, and sequence_length must be positive".into(),
            ));
        }
        if !(self.ball_radius > 0.0) || !self.speed_scale.is_finite() || self.speed_scale < 0.0 {
            return Err(TsbnError::InvalidConfig("ball_radius must be positive and speed_scale nonnegative".into()));
        }
        if (self.resolution as f64) < 4.0 * self.ball_radius {
            return Err(TsbnError::InvalidConfig(format!(
                "resolution {} too small for radius {} (need at least 4x)",
                self.resolution, self.ball_radius
            )));
        }
        Ok(())
    }
}

pub(crate) struct BallSim {
    radius: f64,
    box_size: f64,
    pub pos: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
}

impl BallSim {
    pub(crate) fn new(cfg: &BallsConfig, rng: &mut RngStream) -> Result<Self> {
        let r = cfg.ball_radius;
        let box_size = cfg.resolution as f64;
        let span = box_size - 2.0 * r;
        let mut pos: Vec<[f64; 2]> = Vec::with_capacity(cfg.num_balls);
        let mut attempts = 0usize;
        while pos.len() < cfg.num_balls {
            attempts += 1;
            if attempts > 10_000 {
                return Err(TsbnError::InvalidConfig(format!(
                    "could not place {} non-overlapping balls of radius {r} in a {box_size} box",
                    cfg.num_balls
                )));
            }
            let cand = [r + span * rng.uniform(), r + span * rng.uniform()];
            let clear = pos.iter().all(|p| dist2(p, &cand) >= (2.0 * r + 0.5).powi(2));
            if clear {
                pos.push(cand);
            }
        }
        let mut vel = Vec::with_capacity(cfg.num_balls);
        for _ in 0..cfg.num_balls {
            let speed = cfg.speed_scale * (0.5 + rng.uniform());
            let angle = 2.0 * std::f64::consts::PI * rng.uniform();
            vel.push([speed * angle.cos(), speed * angle.sin()]);
        }
        Ok(BallSim { radius: r, box_size, pos, vel })
    }

    #[cfg(test)]
    pub(crate) fn kinetic_energy(&self) -> f64 {
        0.5 * self.vel.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>()
    }

    pub(crate) fn step(&mut self) {
        let n = self.pos.len();
        for i in 0..n {
            self.pos[i][0] += self.vel[i][0];
            self.pos[i][1] += self.vel[i][1];
        }
        // Walls: reflect position and velocity about the inner box
        // [r, box - r]; repeated in case a fast ball overshoots both sides.
        let lo = self.radius;
        let hi = self.box_size - self.radius;
        for i in 0..n {
            for axis in 0..2 {
                let mut guard = 0;
                loop {
                    let x = self.pos[i][axis];
                    if x < lo {
                        self.pos[i][axis] = 2.0 * lo - x;
                        self.vel[i][axis] = -self.vel[i][axis];
                    } else if x > hi {
                        self.pos[i][axis] = 2.0 * hi - x;
                        self.vel[i][axis] = -self.vel[i][axis];
                    } else {
                        break;
                    }
                    guard += 1;
                    if guard > 64 {
                        // pathological speed; pin inside
                        self.pos[i][axis] = self.pos[i][axis].clamp(lo, hi);
                        break;
                    }
                }
            }
        }
        // Pairwise elastic collisions between equal masses: swap the
        // velocity components along the center line for approaching pairs.
        let min_dist2 = (2.0 * self.radius).powi(2);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = self.pos[j][0] - self.pos[i][0];
                let dy = self.pos[j][1] - self.pos[i][1];
                let d2 = dx * dx + dy * dy;
                if d2 >= min_dist2 || d2 == 0.0 {
                    continue;
                }
                let dvx = self.vel[j][0] - self.vel[i][0];
                let dvy = self.vel[j][1] - self.vel[i][1];
                let approach = dvx * dx + dvy * dy;
                if approach >= 0.0 {
                    continue; // already separating
                }
                let scale = approach / d2;
                let ix = scale * dx;
                let iy = scale * dy;
                self.vel[i][0] += ix;
                self.vel[i][1] += iy;
                self.vel[j][0] -= ix;
                self.vel[j][1] -= iy;
            }
        }
    }

    /// Writes one binary frame: a pixel is lit iff its center lies within
    /// any ball's disk. Pixel (row, col) has center (col + 0.5, row + 0.5)
    /// and flattens to index row * R + col.
    pub(crate) fn render(&self, resolution: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), resolution * resolution);
        out.fill(0.0);
        let r2 = self.radius * self.radius;
        for p in &self.pos {
            let col_lo = ((p[0] - self.radius - 0.5).floor().max(0.0)) as usize;
            let col_hi = ((p[0] + self.radius + 0.5).ceil() as usize).min(resolution);
            let row_lo = ((p[1] - self.radius - 0.5).floor().max(0.0)) as usize;
            let row_hi = ((p[1] + self.radius + 0.5).ceil() as usize).min(resolution);
            for row in row_lo..row_hi {
                let cy = row as f64 + 0.5;
                for col in col_lo..col_hi {
                    let cx = col as f64 + 0.5;
                    let d2 = (cx - p[0]).powi(2) + (cy - p[1]).powi(2);
                    if d2 <= r2 {
                        out[row * resolution + col] = 1.0;
                    }
                }
            }
        }
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn simulate_sequence(cfg: &BallsConfig, seq_index: u64) -> Result<Array2<f64>> {
    let mut rng = RngStream::new(cfg.seed, seq_index);
    let mut sim = BallSim::new(cfg, &mut rng)?;
    let m = cfg.resolution * cfg.resolution;
    let mut frames = Array2::zeros((cfg.sequence_length, m));
    for t in 0..cfg.sequence_length {
        if t > 0 {
            sim.step();
        }
        sim.render(cfg.resolution, frames.row_mut(t).as_slice_mut().unwrap());
    }
    Ok(frames)
}

/// Generates a corpus of bouncing-ball videos. One seeded stream per
/// sequence index, so the corpus is identical regardless of thread count.
pub fn gen_bouncing_balls(cfg: &BallsConfig) -> Result<SequenceBatch> {
    cfg.validate()?;
    let frames: Result<Vec<Array2<f64>>> = (0..cfg.num_sequences as u64)
        .into_par_iter()
        .map(|i| simulate_sequence(cfg, i))
        .collect();
    let mut batch = SequenceBatch::new(Likelihood::Binary, cfg.resolution * cfg.resolution);
    batch.frames = frames?;
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_dimensions() {
        let cfg = BallsConfig { num_sequences: 2, ..Default::default() };
        let batch = gen_bouncing_balls(&cfg).unwrap();
        assert_eq!(batch.dim, 900);
        assert_eq!(batch.len(), 2);
        for seq in &batch.frames {
            assert_eq!(seq.nrows(), 100);
            assert_eq!(seq.ncols(), 900);
        }
        batch.validate().unwrap();
    }

    #[test]
    fn static_ball_gives_identical_frames() {
        let cfg = BallsConfig {
            num_balls: 1,
            speed_scale: 0.0,
            sequence_length: 10,
            num_sequences: 1,
            ..Default::default()
        };
        let batch = gen_bouncing_balls(&cfg).unwrap();
        let first = batch.frames[0].row(0).to_owned();
        for t in 0..10 {
            assert_eq!(batch.frames[0].row(t), first);
        }
        assert!(first.sum() > 0.0, "ball must be visible");
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = BallsConfig { num_sequences: 3, sequence_length: 20, ..Default::default() };
        let a = gen_bouncing_balls(&cfg).unwrap();
        let b = gen_bouncing_balls(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn energy_is_conserved() {
        let cfg = BallsConfig { num_balls: 3, speed_scale: 1.5, ..Default::default() };
        let mut rng = RngStream::new(11, 0);
        let mut sim = BallSim::new(&cfg, &mut rng).unwrap();
        let e0 = sim.kinetic_energy();
        for _ in 0..500 {
            sim.step();
            assert!((sim.kinetic_energy() - e0).abs() < 1e-9);
        }
    }

    #[test]
    fn centers_stay_inside_and_coverage_is_plausible() {
        // Single ball so disks never overlap; lit pixel count stays within
        // +-30% of the disk area.
        let cfg = BallsConfig { num_balls: 1, sequence_length: 200, ..Default::default() };
        let mut rng = RngStream::new(5, 0);
        let mut sim = BallSim::new(&cfg, &mut rng).unwrap();
        let area = std::f64::consts::PI * cfg.ball_radius * cfg.ball_radius;
        let mut frame = vec![0.0; 900];
        for t in 0..cfg.sequence_length {
            if t > 0 {
                sim.step();
            }
            for p in &sim.pos {
                assert!(p[0] >= cfg.ball_radius - 1e-9 && p[0] <= 30.0 - cfg.ball_radius + 1e-9);
                assert!(p[1] >= cfg.ball_radius - 1e-9 && p[1] <= 30.0 - cfg.ball_radius + 1e-9);
            }
            sim.render(30, &mut frame);
            let lit: f64 = frame.iter().sum();
            assert!(
                lit >= 0.7 * area && lit <= 1.3 * area,
                "lit {lit} outside 30% band of {area}"
            );
        }
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let cfg = BallsConfig {
            num_balls: 12,
            resolution: 10,
            ball_radius: 2.5,
            ..Default::default()
        };
        assert!(gen_bouncing_balls(&cfg).is_err());

        let packed = BallsConfig { num_balls: 40, resolution: 16, ball_radius: 2.0, ..Default::default() };
        assert!(gen_bouncing_balls(&packed).is_err());
    }
}
