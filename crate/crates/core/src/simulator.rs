//! Replays a prediction stream as wheelchair motion on a plane, with the
//! differential-drive motor intents a driver board would receive.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax, Model};
use crate::preprocess::{FeatureMatrix, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MotionCommand {
    Forward,
    TurnRight,
    TurnLeft,
}

impl MotionCommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::Forward => "FORWARD",
            Self::TurnRight => "TURN_RIGHT",
            Self::TurnLeft => "TURN_LEFT",
        }
    }
}

/// 0 → forward, 1 → turn right, 2 → turn left.
pub fn map_class(class: i64, tick: usize) -> Result<MotionCommand> {
    match class {
        0 => Ok(MotionCommand::Forward),
        1 => Ok(MotionCommand::TurnRight),
        2 => Ok(MotionCommand::TurnLeft),
        _ => Err(Error::Mapping { tick, class }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in (−π, π].
    pub heading: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self { x: 0.0, y: 0.0, heading: 0.0 }
    }
}

/// Maps into (−π, π]. In-range values pass through untouched so that
/// opposite turns cancel exactly.
pub fn normalize_heading(h: f64) -> f64 {
    if h > -PI && h <= PI {
        return h;
    }
    let r = h.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// m/s
    pub speed: f64,
    /// Radians per turn command.
    pub turn_increment: f64,
    /// Seconds per tick.
    pub dt: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { speed: 0.5, turn_increment: PI / 12.0, dt: 1.0 }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(format!("speed {} must be finite and non-negative", self.speed)));
        }
        if !(self.turn_increment > 0.0 && self.turn_increment <= PI) {
            return Err(Error::Config(format!("turn increment {} not in (0, π]", self.turn_increment)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt {} must be positive", self.dt)));
        }
        Ok(())
    }
}

/// Forward moves `speed · dt` along the heading; turns rotate in place.
pub fn step(pose: Pose, command: MotionCommand, params: &SimParams) -> Pose {
    match command {
        MotionCommand::Forward => {
            let d = params.speed * params.dt;
            Pose { x: pose.x + d * pose.heading.cos(), y: pose.y + d * pose.heading.sin(), heading: pose.heading }
        }
        MotionCommand::TurnRight => Pose { heading: normalize_heading(pose.heading - params.turn_increment), ..pose },
        MotionCommand::TurnLeft => Pose { heading: normalize_heading(pose.heading + params.turn_increment), ..pose },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotorState {
    Forward,
    Stop,
    Reverse,
}

impl MotorState {
    pub fn name(self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::Stop => "stop",
            Self::Reverse => "reverse",
        }
    }
}

/// Logic levels for an L298N-style dual H-bridge. IN1/IN2/ENA drive the left
/// motor, IN3/IN4/ENB the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinLevels {
    #[serde(rename = "IN1")]
    pub in1: u8,
    #[serde(rename = "IN2")]
    pub in2: u8,
    #[serde(rename = "IN3")]
    pub in3: u8,
    #[serde(rename = "IN4")]
    pub in4: u8,
    #[serde(rename = "ENA")]
    pub ena: u8,
    #[serde(rename = "ENB")]
    pub enb: u8,
}

fn bridge_state(enable: u8, a: u8, b: u8) -> MotorState {
    match (enable, a, b) {
        (1, 1, 0) => MotorState::Forward,
        (1, 0, 1) => MotorState::Reverse,
        _ => MotorState::Stop,
    }
}

impl PinLevels {
    pub fn left(&self) -> MotorState {
        bridge_state(self.ena, self.in1, self.in2)
    }

    pub fn right(&self) -> MotorState {
        bridge_state(self.enb, self.in3, self.in4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub left: MotorState,
    pub right: MotorState,
    pub pins: PinLevels,
}

const STOPPED: PinLevels = PinLevels { in1: 0, in2: 0, in3: 0, in4: 0, ena: 0, enb: 0 };

pub const DEFAULT_PIN_MAP: &str = include_str!("../assets/pin_map.json");

#[derive(Debug, Clone, PartialEq)]
pub struct PinMap(BTreeMap<MotionCommand, PinLevels>);

impl PinMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<MotionCommand, PinLevels> =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("pin map: {e}")))?;
        for c in [MotionCommand::Forward, MotionCommand::TurnRight, MotionCommand::TurnLeft] {
            if !map.contains_key(&c) {
                return Err(Error::Config(format!("pin map lacks {}", c.name())));
            }
        }
        if map.values().flat_map(|p| [p.in1, p.in2, p.in3, p.in4, p.ena, p.enb]).any(|v| v > 1) {
            return Err(Error::Config("pin levels must be 0 or 1".into()));
        }
        Ok(Self(map))
    }

    pub fn motor_command(&self, command: MotionCommand) -> MotorCommand {
        let pins = self.0[&command];
        MotorCommand { left: pins.left(), right: pins.right(), pins }
    }
}

impl Default for PinMap {
    fn default() -> Self {
        Self::from_json(DEFAULT_PIN_MAP).expect("bundled pin map is valid")
    }
}

/// Receives one motor command per tick.
pub trait MotorSink {
    fn emit(&mut self, tick: usize, command: &MotorCommand) -> Result<()>;
}

/// Writes one JSON line per tick, the desk-scale stand-in for a GPIO driver.
pub struct LogSink<W: Write> {
    out: W,
}

impl<W: Write> LogSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MotorSink for LogSink<W> {
    fn emit(&mut self, tick: usize, command: &MotorCommand) -> Result<()> {
        let line = serde_json::json!({ "tick": tick, "left": command.left, "right": command.right, "pins": command.pins });
        writeln!(self.out, "{line}").map_err(|e| Error::io("motor log", e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub tick: usize,
    /// Empty on the initial-pose row.
    pub predicted_class: Option<u8>,
    pub command: Option<MotionCommand>,
    pub pose: Pose,
    pub left_motor: MotorState,
    pub right_motor: MotorState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryLog {
    pub fn final_pose(&self) -> Pose {
        self.rows.last().expect("log always holds the initial pose").pose
    }

    /// Sum of straight-line distances between consecutive poses.
    pub fn path_length(&self) -> f64 {
        self.rows.windows(2).map(|w| (w[1].pose.x - w[0].pose.x).hypot(w[1].pose.y - w[0].pose.y)).sum()
    }

    pub fn predictions(&self) -> Vec<u8> {
        self.rows.iter().filter_map(|r| r.predicted_class).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tick,predicted_class,command,x_m,y_m,heading_rad,left_motor,right_motor\n");
        for r in &self.rows {
            let class = r.predicted_class.map(|c| c.to_string()).unwrap_or_default();
            let cmd = r.command.map(|c| c.name()).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.tick,
                class,
                cmd,
                r.pose.x,
                r.pose.y,
                r.pose.heading,
                r.left_motor.name(),
                r.right_motor.name()
            )
            .unwrap();
        }
        s
    }
}

/// Folds `step` over the stream. Row 0 holds `pose0` with motors stopped;
/// row `t` holds the pose after the `t`-th prediction.
pub fn run_simulation(
    predictions: &[u8],
    params: &SimParams,
    pose0: Pose,
    pins: &PinMap,
    mut sink: Option<&mut dyn MotorSink>,
) -> Result<TrajectoryLog> {
    params.validate()?;
    let idle = MotorCommand { left: MotorState::Stop, right: MotorState::Stop, pins: STOPPED };
    let mut rows = Vec::with_capacity(predictions.len() + 1);
    rows.push(TrajectoryRow {
        tick: 0,
        predicted_class: None,
        command: None,
        pose: pose0,
        left_motor: idle.left,
        right_motor: idle.right,
    });
    let mut pose = pose0;
    for (i, &class) in predictions.iter().enumerate() {
        let tick = i + 1;
        let command = map_class(class as i64, tick)?;
        let motors = pins.motor_command(command);
        if let Some(s) = sink.as_deref_mut() {
            s.emit(tick, &motors)?;
        }
        pose = step(pose, command, params);
        rows.push(TrajectoryRow {
            tick,
            predicted_class: Some(class),
            command: Some(command),
            pose,
            left_motor: motors.left,
            right_motor: motors.right,
        });
    }
    Ok(TrajectoryLog { rows })
}

/// Argmax per row, ties toward the lowest class.
pub fn decode_probabilities(probs: &[[f64; N_CLASSES]]) -> Vec<u8> {
    probs.iter().map(|p| argmax(p) as u8).collect()
}

/// Predicted class for every window of `epochs`, in order.
pub fn decode_stream(model: &Model, epochs: &FeatureMatrix) -> Result<Vec<u8>> {
    let width = model.input_width();
    if epochs.n_cols() != width {
        return Err(Error::Shape(format!(
            "epoch 0 has {} values ({}×{}), model expects {width}",
            epochs.n_cols(),
            epochs.n_channels,
            epochs.n_samples
        )));
    }
    Ok(decode_probabilities(&model.predict_proba(&epochs.x, epochs.n_rows())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LogReg, LogregConfig};
    use rand::Rng as _;

    fn sim(stream: &[u8]) -> TrajectoryLog {
        run_simulation(stream, &SimParams::default(), Pose::default(), &PinMap::default(), None).unwrap()
    }

    #[test]
    fn class_mapping() {
        assert_eq!(map_class(0, 0).unwrap(), MotionCommand::Forward);
        assert_eq!(map_class(1, 0).unwrap(), MotionCommand::TurnRight);
        assert_eq!(map_class(2, 0).unwrap(), MotionCommand::TurnLeft);
        assert!(matches!(map_class(3, 7), Err(Error::Mapping { tick: 7, class: 3 })));
        assert!(matches!(map_class(-1, 0), Err(Error::Mapping { .. })));
    }

    #[test]
    fn single_steps() {
        let p = SimParams::default();
        assert_eq!(step(Pose::default(), MotionCommand::Forward, &p), Pose { x: 0.5, y: 0.0, heading: 0.0 });
        let turned = step(step(Pose::default(), MotionCommand::TurnLeft, &p), MotionCommand::TurnRight, &p);
        assert_eq!(turned, Pose::default());
        let turned = step(step(Pose::default(), MotionCommand::TurnRight, &p), MotionCommand::TurnLeft, &p);
        assert_eq!(turned, Pose::default());
        assert_eq!(normalize_heading(PI), PI);
        assert!((normalize_heading(-PI) - PI).abs() < 1e-15);
        assert!((normalize_heading(7.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_rotation_restores_heading() {
        let log = sim(&[1; 24]);
        assert!(log.final_pose().heading.abs() < 1e-12);
        assert_eq!((log.final_pose().x, log.final_pose().y), (0.0, 0.0));
        for r in &log.rows {
            assert!(r.pose.heading > -PI && r.pose.heading <= PI);
        }
    }

    #[test]
    fn straight_line() {
        let log = sim(&[0; 9]);
        assert_eq!(log.final_pose(), Pose { x: 4.5, y: 0.0, heading: 0.0 });
        assert_eq!(sim(&[]).rows.len(), 1);
    }

    #[test]
    fn hand_trace() {
        // forward to (0.5, 0), face −15°, forward again
        let end = sim(&[0, 1, 0]).final_pose();
        let a = -PI / 12.0;
        assert!((end.x - (0.5 + 0.5 * a.cos())).abs() < 1e-15);
        assert!((end.y - 0.5 * a.sin()).abs() < 1e-15);
        assert!((end.heading - a).abs() < 1e-15);
    }

    #[test]
    fn random_streams_obey_invariants() {
        let mut rng = crate::seed::rng_for(3, "sim-test");
        for _ in 0..200 {
            let n = rng.gen_range(0..60);
            let stream: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let log = sim(&stream);
            let forwards = stream.iter().filter(|&&c| c == 0).count() as f64;
            assert!((log.path_length() - forwards * 0.5).abs() < 1e-9);
            for w in log.rows.windows(2) {
                match w[1].command.unwrap() {
                    MotionCommand::Forward => assert_eq!(w[0].pose.heading, w[1].pose.heading),
                    _ => assert_eq!((w[0].pose.x, w[0].pose.y), (w[1].pose.x, w[1].pose.y)),
                }
            }
            assert_eq!(sim(&log.predictions()).final_pose(), log.final_pose());
        }
    }

    #[test]
    fn motor_mapping() {
        let pins = PinMap::default();
        let f = pins.motor_command(MotionCommand::Forward);
        assert_eq!((f.left, f.right), (MotorState::Forward, MotorState::Forward));
        let r = pins.motor_command(MotionCommand::TurnRight);
        assert_eq!((r.left, r.right), (MotorState::Forward, MotorState::Stop));
        let l = pins.motor_command(MotionCommand::TurnLeft);
        assert_eq!((l.left, l.right), (MotorState::Stop, MotorState::Forward));
        let rev = PinLevels { in1: 0, in2: 1, in3: 0, in4: 1, ena: 1, enb: 1 };
        assert_eq!((rev.left(), rev.right()), (MotorState::Reverse, MotorState::Reverse));
        assert!(matches!(PinMap::from_json(r#"{"FORWARD": {"IN1":1,"IN2":0,"IN3":1,"IN4":0,"ENA":1,"ENB":1}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn sink_receives_each_tick() {
        let mut sink = LogSink::new(Vec::new());
        run_simulation(&[0, 2], &SimParams::default(), Pose::default(), &PinMap::default(), Some(&mut sink)).unwrap();
        let text = String::from_utf8(sink.into_inner()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains(r#""left":"stop""#));
    }

    #[test]
    fn csv_has_initial_row() {
        let csv = sim(&[0]).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "0,,,0,0,0,stop,stop");
        assert_eq!(lines[2], "1,0,FORWARD,0.5,0,0,forward,forward");
    }

    #[test]
    fn decoding() {
        assert_eq!(decode_probabilities(&[[1.0 / 3.0; 3]; 4]), vec![0; 4]);
        let labels = [2u8, 0, 1, 1];
        let onehot: Vec<[f64; 3]> = labels.iter().map(|&l| std::array::from_fn(|k| (k == l as usize) as u8 as f64)).collect();
        assert_eq!(decode_probabilities(&onehot), labels);

        let mut rng = crate::seed::rng_for(9, "decode-test");
        let mut m = LogReg::zeros(4, LogregConfig::default());
        m.weight.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fm = FeatureMatrix::new(2, 2, x.clone(), vec![0; 50]).unwrap();
        let model = Model::Logreg(m.clone());
        let oracle: Vec<u8> = x
            .chunks(4)
            .map(|row| {
                let s: Vec<f64> = (0..3).map(|k| (0..4).map(|j| row[j] * m.weight[j * 3 + k]).sum()).collect();
                argmax(&s) as u8
            })
            .collect();
        assert_eq!(decode_stream(&model, &fm).unwrap(), oracle);
        let wrong = FeatureMatrix::new(1, 2, vec![0.0; 4], vec![0, 0]).unwrap();
        assert!(matches!(decode_stream(&model, &wrong), Err(Error::Shape(_))));
    }
}
