//! Seeded synthetic data for tests, benches and demos.
//!
//! [`generate_sequences`] simulates people walking around a room, sitting
//! and lying down on purpose, and occasionally falling. A fall is a short
//! motif: the torso sensors drop to the floor within a few readings while
//! the ankles kick up and the body lurches sideways. Every individual has
//! its own room position, body height and fall dynamics, so the clients are
//! not identically distributed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::align::AlignedSequence;
use super::ldpa::{BodyLocation, RawRecord, SENSOR_TAGS};
use super::split::{ClientData, DatasetSplit};
use super::types::{MergedRecord, Origin, SequenceWindow};
use super::window::window_count;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub individuals: usize,
    pub sequences_per_individual: usize,
    pub records_per_sequence: usize,
    pub window: usize,
    /// Target share of fall-labeled windows (stride 1).
    pub fall_window_fraction: f64,
    /// Readings per fall.
    pub motif_len: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            individuals: 5,
            sequences_per_individual: 5,
            records_per_sequence: 1200,
            window: 20,
            fall_window_fraction: 0.02,
            motif_len: 4,
            noise: 0.015,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Falls planted per sequence so that roughly `fall_window_fraction` of
    /// the stride-1 windows contain one (at least one fall per sequence).
    pub fn falls_per_sequence(&self) -> usize {
        let windows = window_count(self.records_per_sequence, self.window, 1) as f64;
        let per_fall = (self.window + self.motif_len - 1) as f64;
        ((self.fall_window_fraction * windows / per_fall).round() as usize).max(1)
    }
}

pub fn individual_name(i: usize) -> String {
    let mut s = String::new();
    let mut k = i;
    loop {
        s.insert(0, (b'A' + (k % 26) as u8) as char);
        if k < 26 {
            break;
        }
        k = k / 26 - 1;
    }
    s
}

/// Per-individual body and behaviour parameters.
#[derive(Debug, Clone, Copy)]
struct Person {
    home: (f64, f64),
    height: f64,
    stride: f64,
    kick: f64,
    lurch: f64,
}

impl Person {
    fn sample(rng: &mut seed::SimRng) -> Self {
        Self {
            home: (rng.gen_range(0.5..3.5), rng.gen_range(0.5..3.5)),
            height: rng.gen_range(0.85..1.15),
            stride: rng.gen_range(0.03..0.08),
            kick: rng.gen_range(0.5..0.8),
            lurch: rng.gen_range(0.25..0.5),
        }
    }

    fn torso(&self, posture: Posture) -> (f64, f64) {
        match posture {
            Posture::Standing => (1.35 * self.height, 1.0 * self.height),
            Posture::Sitting => (0.9 * self.height, 0.55 * self.height),
            Posture::Lying => (0.18, 0.14),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Posture {
    Standing,
    Sitting,
    Lying,
}

/// One reading of the three worn sensors before noise.
#[derive(Debug, Clone, Copy)]
struct Pose {
    pos: (f64, f64),
    ankle_z: f64,
    chest_z: f64,
    belt_z: f64,
    offset: (f64, f64),
    falling: bool,
}

struct Walker<'a> {
    person: Person,
    rng: &'a mut seed::SimRng,
    pos: (f64, f64),
    vel: (f64, f64),
    phase: f64,
    out: Vec<Pose>,
}

impl Walker<'_> {
    fn emit(&mut self, posture_z: (f64, f64), ankle_z: f64, offset: (f64, f64), falling: bool) {
        self.out.push(Pose {
            pos: self.pos,
            ankle_z,
            chest_z: posture_z.0,
            belt_z: posture_z.1,
            offset,
            falling,
        });
    }

    fn walk(&mut self) {
        let p = self.person;
        self.vel.0 = 0.85 * self.vel.0 + self.rng.gen_range(-1.0..1.0) * p.stride * 0.3;
        self.vel.1 = 0.85 * self.vel.1 + self.rng.gen_range(-1.0..1.0) * p.stride * 0.3;
        // drift back toward the home position
        self.vel.0 += 0.01 * (p.home.0 - self.pos.0);
        self.vel.1 += 0.01 * (p.home.1 - self.pos.1);
        self.pos.0 += self.vel.0;
        self.pos.1 += self.vel.1;
        self.phase += 0.9;
        let ankle = 0.1 + 0.05 * self.phase.sin().abs();
        let gait = (0.04 * self.phase.sin(), 0.04 * self.phase.cos());
        self.emit(p.torso(Posture::Standing), ankle, gait, false);
    }

    fn hold(&mut self, posture: Posture, n: usize) {
        let z = self.person.torso(posture);
        for _ in 0..n {
            self.emit(z, 0.08, (0.0, 0.0), false);
        }
    }

    fn transition(&mut self, from: Posture, to: Posture, n: usize) {
        let a = self.person.torso(from);
        let b = self.person.torso(to);
        for k in 1..=n {
            let s = k as f64 / n as f64;
            self.emit((a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1)), 0.09, (0.0, 0.0), false);
        }
    }

    fn fall(&mut self, len: usize) {
        let p = self.person;
        let a = p.torso(Posture::Standing);
        let b = p.torso(Posture::Lying);
        let dir: f64 = self.rng.gen_range(0.0..std::f64::consts::TAU);
        for k in 1..=len {
            let s = k as f64 / len as f64;
            let kick = p.kick * (0.7 + 0.3 * (std::f64::consts::PI * s).sin());
            let lurch = (p.lurch * s * dir.cos(), p.lurch * s * dir.sin());
            self.emit((a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1)), 0.1 + kick, lurch, true);
        }
        self.pos.0 += p.lurch * dir.cos();
        self.pos.1 += p.lurch * dir.sin();
        self.vel = (0.0, 0.0);
    }
}

fn simulate(person: Person, spec: &SyntheticSpec, rng: &mut seed::SimRng) -> Vec<Pose> {
    let len = spec.records_per_sequence;
    let falls = spec.falls_per_sequence();
    // fall onsets: one per equal slice of the sequence, clear of both ends
    let margin = spec.window + spec.motif_len;
    let slice = len / falls;
    let onsets: Vec<usize> = (0..falls)
        .map(|i| {
            let lo = i * slice + margin.min(slice / 2);
            let hi = ((i + 1) * slice).saturating_sub(margin + 60).max(lo + 1);
            rng.gen_range(lo..hi)
        })
        .collect();
    let mut w = Walker {
        person,
        pos: person.home,
        vel: (0.0, 0.0),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        rng,
        out: Vec::with_capacity(len + 128),
    };
    let mut next_fall = 0;
    while w.out.len() < len {
        let t = w.out.len();
        if next_fall < onsets.len() && t >= onsets[next_fall] {
            next_fall += 1;
            w.fall(spec.motif_len);
            let lie = w.rng.gen_range(20..40);
            w.hold(Posture::Lying, lie);
            w.transition(Posture::Lying, Posture::Standing, 10);
            continue;
        }
        let room = onsets.get(next_fall).map_or(usize::MAX, |&o| o.saturating_sub(t));
        if room > 90 && w.rng.gen_bool(0.01) {
            let posture = if w.rng.gen_bool(0.5) { Posture::Sitting } else { Posture::Lying };
            w.transition(Posture::Standing, posture, 10);
            let n = w.rng.gen_range(15..50);
            w.hold(posture, n);
            w.transition(posture, Posture::Standing, 10);
            continue;
        }
        w.walk();
    }
    w.out.truncate(len);
    w.out
}

/// Generates `individuals × sequences_per_individual` merged sequences named
/// "A01", "A02", … with falls labeled 1.
pub fn generate_sequences(spec: &SyntheticSpec) -> Vec<AlignedSequence> {
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise level");
    let mut out = Vec::new();
    for i in 0..spec.individuals {
        let ind = individual_name(i);
        let mut prng = seed::rng(seed::derive(spec.seed, &format!("person-{ind}")));
        let person = Person::sample(&mut prng);
        for s in 1..=spec.sequences_per_individual {
            let name = format!("{ind}{s:02}");
            let mut rng = seed::rng(seed::derive(spec.seed, &format!("sequence-{name}")));
            let poses = simulate(person, spec, &mut rng);
            let records = poses
                .iter()
                .map(|p| {
                    let (x, y) = (p.pos.0 + p.offset.0, p.pos.1 + p.offset.1);
                    let mut f = [
                        x + 0.1, y, p.ankle_z,
                        x, y, p.chest_z,
                        x, y + 0.05, p.belt_z,
                    ];
                    for v in &mut f {
                        *v += noise.sample(&mut rng);
                    }
                    MergedRecord {
                        features: f,
                        label: u8::from(p.falling),
                    }
                })
                .collect();
            out.push(AlignedSequence {
                sequence: name,
                individual: ind.clone(),
                ankle: BodyLocation::LeftAnkle,
                records,
            });
        }
    }
    out
}

/// Renders a merged sequence as raw per-sensor rows (left ankle, chest, belt)
/// with 10 ms timestamps, the inverse of alignment for equal-length streams.
pub fn to_raw_records(seq: &AlignedSequence) -> Vec<RawRecord> {
    let tag = |loc: BodyLocation| {
        SENSOR_TAGS
            .iter()
            .find(|(_, l)| *l == loc)
            .map(|(t, _)| t.to_string())
            .expect("every location has a tag")
    };
    let tags = [
        (tag(seq.ankle), 0),
        (tag(BodyLocation::Chest), 3),
        (tag(BodyLocation::Belt), 6),
    ];
    let base: i64 = 633_790_226_051_280_000;
    let mut rows = Vec::with_capacity(seq.records.len() * 3);
    for (k, r) in seq.records.iter().enumerate() {
        for (j, (t, off)) in tags.iter().enumerate() {
            let ts = base + (k as i64 * 3 + j as i64) * 100_000;
            rows.push(RawRecord {
                sequence_name: seq.sequence.clone(),
                sensor_tag: t.clone(),
                timestamp: ts,
                date: format!("27.05.2009 14:03:{:02}:{:03}", (k / 100) % 60, (k % 100) * 10),
                x: r.features[*off],
                y: r.features[off + 1],
                z: r.features[off + 2],
                activity: if r.label == 1 { "falling" } else { "walking" }.to_string(),
            });
        }
    }
    rows
}

/// Writes rows in the 8-column headerless layout
/// `sequence,tag,timestamp,date,x,y,z,activity`.
pub fn write_ldpa_csv(w: impl std::io::Write, rows: &[RawRecord]) -> crate::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for r in rows {
        out.write_record([
            r.sequence_name.as_str(),
            r.sensor_tag.as_str(),
            &r.timestamp.to_string(),
            r.date.as_str(),
            &r.x.to_string(),
            &r.y.to_string(),
            &r.z.to_string(),
            r.activity.as_str(),
        ])?;
    }
    out.flush()
        .map_err(|e| crate::Error::format("csv output", e.to_string()))?;
    Ok(())
}

/// Linearly separable windows: fall windows are shifted by `+margin`, others
/// by `−margin`, on top of uniform noise in `[−1, 1]`. Returns one
/// `(train, test)` pair per client; roughly a third of the windows are falls.
pub fn separable_clients(
    clients: usize,
    train_per_client: usize,
    test_per_client: usize,
    steps: usize,
    features: usize,
    margin: f64,
    seed_value: u64,
) -> Vec<(Vec<SequenceWindow>, Vec<SequenceWindow>)> {
    (0..clients)
        .map(|c| {
            let ind = individual_name(c);
            let mut rng = seed::rng(seed::derive(seed_value, &format!("separable-{ind}")));
            let skew: f64 = rng.gen_range(-0.3..0.3);
            let mut make = |n: usize, part: &str| -> Vec<SequenceWindow> {
                (0..n)
                    .map(|k| {
                        let label = u8::from(rng.gen_bool(1.0 / 3.0));
                        let shift = if label == 1 { margin } else { -margin };
                        let values = (0..steps * features)
                            .map(|_| shift + skew + rng.gen_range(-1.0..1.0))
                            .collect();
                        SequenceWindow::new(
                            steps,
                            features,
                            values,
                            label,
                            Origin {
                                individual: ind.clone(),
                                sequence: format!("{ind}-{part}"),
                                start: k,
                                synthetic: false,
                            },
                        )
                    })
                    .collect()
            };
            let train = make(train_per_client, "train");
            let test = make(test_per_client, "test");
            (train, test)
        })
        .collect()
}

/// [`separable_clients`] packed as a [`DatasetSplit`] keyed by client name.
pub fn separable_split(
    clients: usize,
    train_per_client: usize,
    test_per_client: usize,
    steps: usize,
    features: usize,
    margin: f64,
    seed_value: u64,
) -> DatasetSplit {
    let parts = separable_clients(clients, train_per_client, test_per_client, steps, features, margin, seed_value);
    DatasetSplit {
        steps,
        features,
        clients: parts
            .into_iter()
            .enumerate()
            .map(|(i, (train, test))| {
                let ind = individual_name(i);
                let data = ClientData {
                    train,
                    test,
                    train_sequences: vec![format!("{ind}-train")],
                    test_sequences: vec![format!("{ind}-test")],
                };
                (ind, data)
            })
            .collect(),
    }
}
