use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};

use super::{Event, Packet, PipelineError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// One thread per stage, bounded queues, real sleeps.
    Concurrent,
    /// Stages run one after another on a virtual clock.
    Sequential,
}

impl ExecMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExecMode::Concurrent => "concurrent",
            ExecMode::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageRun {
    pub events: Vec<Event>,
    pub audio: Vec<f64>,
}

/// A failed run: the first failing stage plus whatever was logged.
#[derive(Debug, Clone)]
pub struct StageFailure {
    pub stage: String,
    pub reason: String,
    pub events: Vec<Event>,
    pub audio: Vec<f64>,
}

pub const SINK: &str = "sink";

fn us(ms: f64) -> u64 {
    (ms * 1000.0).round().max(0.0) as u64
}

struct Clock {
    t0: Instant,
}

impl Clock {
    fn now_ms(&self) -> f64 {
        self.t0.elapsed().as_secs_f64() * 1000.0
    }

    fn sleep_until(&self, ms: f64) {
        let target = self.t0 + Duration::from_secs_f64(ms.max(0.0) / 1000.0);
        let now = Instant::now();
        if target > now {
            thread::sleep(target - now);
        }
    }
}

#[derive(Clone)]
struct Log {
    events: Arc<Mutex<Vec<Event>>>,
}

impl Log {
    fn push(&self, t_ms: f64, stage: &str, event: &'static str, payload: u64) {
        let e = Event { timestamp_us: us(t_ms), stage: stage.to_string(), event, payload };
        self.events.lock().unwrap_or_else(|p| p.into_inner()).push(e);
    }

    fn take(&self) -> Vec<Event> {
        let mut v = std::mem::take(&mut *self.events.lock().unwrap_or_else(|p| p.into_inner()));
        v.sort_by_key(|e| e.timestamp_us);
        v
    }
}

fn out_event(p: &Packet) -> &'static str {
    if matches!(p, Packet::Audio(_)) {
        "audio"
    } else {
        "emit"
    }
}

/// A packet and the time its producer emitted it.
type Stamped = (Packet, f64);

fn worker(
    mut stage: Box<dyn Stage>,
    rx: Option<Receiver<Stamped>>,
    tx: Sender<Stamped>,
    clock: &Clock,
    log: &Log,
) -> Result<(), PipelineError> {
    let name = stage.name().to_string();
    let mut closed = rx.is_none();
    if closed {
        stage.close()?;
    }
    let (mut prev_deadline, mut ready, mut unit) = (0.0f64, 0.0f64, 0u64);
    loop {
        match stage.work()? {
            Some(u) => {
                let start = prev_deadline.max(ready);
                let deadline = (start + u.cost_ms).max(clock.now_ms());
                clock.sleep_until(deadline);
                let end = clock.now_ms();
                if u.cost_ms > 0.0 || !u.outputs.is_empty() {
                    log.push(start, &name, "unit_start", unit);
                    log.push(end, &name, "unit_end", unit);
                    unit += 1;
                }
                // The next unit starts at this deadline unless a full queue held us up;
                // restarting from "now" every time would accumulate sleep overshoot.
                let mut resume = deadline;
                for p in u.outputs {
                    log.push(end, &name, out_event(&p), p.size());
                    match tx.try_send((p, end)) {
                        Ok(()) => {}
                        Err(TrySendError::Full(p)) => {
                            let before = clock.now_ms();
                            if tx.send(p).is_err() {
                                return Ok(());
                            }
                            let after = clock.now_ms();
                            log.push(after, &name, "blocked", us(after - before));
                            resume = resume.max(after);
                        }
                        // downstream is gone; it reports its own failure
                        Err(TrySendError::Disconnected(_)) => return Ok(()),
                    }
                    log.push(clock.now_ms(), &name, "queue", tx.len() as u64);
                }
                prev_deadline = resume;
            }
            None if closed => {
                log.push(clock.now_ms(), &name, "done", unit);
                return Ok(());
            }
            None => {
                let idle = clock.now_ms();
                let got = rx.as_ref().expect("open stages have an input").recv();
                let now = clock.now_ms();
                log.push(now, &name, "wait", us(now - idle));
                // Simulated time: an input is ready when it was emitted, not when
                // this thread got scheduled to pick it up.
                ready = match got {
                    Ok((p, sent)) => {
                        log.push(now, &name, "recv", p.size());
                        stage.accept(p)?;
                        sent
                    }
                    Err(_) => {
                        closed = true;
                        log.push(now, &name, "close", 0);
                        stage.close()?;
                        now
                    }
                };
            }
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

fn run_concurrent(stages: Vec<Box<dyn Stage>>, capacity: usize, sink_ms: f64) -> Result<StageRun, StageFailure> {
    let clock = Clock { t0: Instant::now() };
    let log = Log { events: Arc::new(Mutex::new(Vec::new())) };
    let names: Vec<String> = stages.iter().map(|s| s.name().to_string()).collect();
    let mut audio = Vec::new();
    let mut failure: Option<(String, String)> = None;
    thread::scope(|scope| {
        let mut rx_prev: Option<Receiver<Stamped>> = None;
        let mut handles = Vec::new();
        for stage in stages {
            let (tx, rx) = bounded(capacity.max(1));
            let rx_in = rx_prev.replace(rx);
            let (clock, log) = (&clock, &log);
            handles.push(scope.spawn(move || worker(stage, rx_in, tx, clock, log)));
        }
        let rx = rx_prev.expect("at least one stage");
        let mut prev = 0.0f64;
        let mut idle = clock.now_ms();
        while let Ok((p, _)) = rx.recv() {
            let now = clock.now_ms();
            log.push(now, SINK, "wait", us(now - idle));
            log.push(now, SINK, "recv", p.size());
            if let Packet::Audio(a) = p {
                audio.extend(a);
            }
            if sink_ms > 0.0 {
                prev = prev.max(now) + sink_ms;
                clock.sleep_until(prev);
            }
            idle = clock.now_ms();
        }
        log.push(clock.now_ms(), SINK, "done", 0);
        for (h, name) in handles.into_iter().zip(&names) {
            let reason = match h.join() {
                Ok(Ok(())) => continue,
                Ok(Err(e)) => e.to_string(),
                Err(p) => panic_message(p),
            };
            failure.get_or_insert((name.clone(), reason));
        }
    });
    let events = log.take();
    match failure {
        None => Ok(StageRun { events, audio }),
        Some((stage, reason)) => Err(StageFailure { stage, reason, events, audio }),
    }
}

/// Virtual-time replay of one stage over its complete input list.
#[allow(clippy::too_many_arguments)]
fn replay_stage(
    stage: &mut dyn Stage,
    name: &str,
    source: bool,
    queue: Vec<(f64, Packet)>,
    upstream_done: f64,
    log: &Log,
    outputs: &mut Vec<(f64, Packet)>,
    done: &mut f64,
) -> Result<(), PipelineError> {
    let mut closed = source;
    if closed {
        stage.close()?;
    }
    let (mut prev, mut ready, mut unit) = (0.0f64, 0.0f64, 0u64);
    let mut queue = queue.into_iter();
    loop {
        *done = prev.max(ready);
        match stage.work()? {
            Some(u) => {
                let start = prev.max(ready);
                let end = start + u.cost_ms;
                if u.cost_ms > 0.0 || !u.outputs.is_empty() {
                    log.push(start, name, "unit_start", unit);
                    log.push(end, name, "unit_end", unit);
                    unit += 1;
                }
                for p in u.outputs {
                    log.push(end, name, out_event(&p), p.size());
                    outputs.push((end, p));
                }
                prev = end;
            }
            None if closed => {
                log.push(*done, name, "done", unit);
                return Ok(());
            }
            None => {
                let (at, packet) = match queue.next() {
                    Some((at, p)) => (at, Some(p)),
                    None => (upstream_done, None),
                };
                let now = at.max(prev);
                log.push(now, name, "wait", us((at - prev).max(0.0)));
                match packet {
                    Some(p) => {
                        log.push(now, name, "recv", p.size());
                        stage.accept(p)?;
                    }
                    None => {
                        closed = true;
                        log.push(now, name, "close", 0);
                        stage.close()?;
                    }
                }
                ready = now;
            }
        }
    }
}

/// Virtual-time execution: each stage consumes its upstream's timestamped
/// output in order. Queues are unbounded here, so backpressure never delays
/// a stage; the data flow, and therefore the audio, is unchanged.
fn run_sequential(stages: Vec<Box<dyn Stage>>, sink_ms: f64) -> Result<StageRun, StageFailure> {
    let log = Log { events: Arc::new(Mutex::new(Vec::new())) };
    let mut inputs: Vec<(f64, Packet)> = Vec::new();
    let mut upstream_done = 0.0f64;
    let mut failure: Option<(String, String)> = None;
    for (i, mut stage) in stages.into_iter().enumerate() {
        let name = stage.name().to_string();
        let mut outputs = Vec::new();
        let queue = std::mem::take(&mut inputs);
        let mut done = upstream_done;
        // Like a failed thread, a failed stage keeps what it already emitted
        // and downstream stages drain it.
        let result = panic::catch_unwind(AssertUnwindSafe(|| {
            replay_stage(stage.as_mut(), &name, i == 0, queue, upstream_done, &log, &mut outputs, &mut done)
        }));
        let err = match result {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e.to_string()),
            Err(p) => Some(panic_message(p)),
        };
        if let Some(reason) = err {
            log.push(done, &name, "failed", 0);
            failure.get_or_insert((name, reason));
        }
        upstream_done = done;
        inputs = outputs;
    }
    let mut audio = Vec::new();
    let mut prev = 0.0f64;
    for (at, p) in inputs {
        let now = at.max(prev);
        log.push(now, SINK, "recv", p.size());
        if let Packet::Audio(a) = p {
            audio.extend(a);
        }
        prev = now + sink_ms;
    }
    log.push(prev.max(upstream_done), SINK, "done", 0);
    if let Some((stage, reason)) = failure {
        return Err(StageFailure { stage, reason, events: log.take(), audio });
    }
    Ok(StageRun { events: log.take(), audio })
}

/// Runs a chain of stages; the last stage feeds the sink, which collects
/// audio and optionally spends `sink_ms` per packet.
pub fn run_stages(
    stages: Vec<Box<dyn Stage>>,
    mode: ExecMode,
    queue_capacity: usize,
    sink_ms: f64,
) -> Result<StageRun, StageFailure> {
    assert!(!stages.is_empty(), "a pipeline needs at least one stage");
    match mode {
        ExecMode::Concurrent => run_concurrent(stages, queue_capacity, sink_ms),
        ExecMode::Sequential => run_sequential(stages, sink_ms),
    }
}
