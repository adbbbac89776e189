//! Modular arithmetic-chain tasks and the exact per-step oracle.
//!
//! A task is a start value followed by `length` operations, all modulo `m`.
//! Each correctly rendered step is one line `a <op> b = c` with c the true
//! result mod m, so a regex plus `rem_euclid` decides local soundness with
//! no tolerance.

use std::sync::LazyLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ToyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTask {
    pub start_value: u32,
    pub ops: Vec<(Op, u32)>,
    pub target_answer: u32,
    pub modulus: u32,
}

impl ToyTask {
    /// Stable question rendering; identical tasks produce identical text.
    pub fn question(&self) -> String {
        let chain: Vec<String> =
            self.ops.iter().map(|(op, operand)| format!("{} {}", op.symbol(), operand)).collect();
        format!(
            "Start from {} and apply in order: {}. All arithmetic is modulo {}. What is the final value?",
            self.start_value,
            chain.join(", "),
            self.modulus
        )
    }

    pub fn ground_truth(&self) -> String {
        self.target_answer.to_string()
    }
}

/// One chain step: `value <op> operand` mod m. Operands stay below m, so
/// subtraction can borrow a single m.
pub fn fold_op(value: u32, op: Op, operand: u32, modulus: u32) -> u32 {
    match op {
        Op::Add => (value + operand) % modulus,
        Op::Sub => (value + modulus - operand) % modulus,
        Op::Mul => ((value as u64 * operand as u64) % modulus as u64) as u32,
    }
}

/// Draw a task of `length` steps: uniform start in [0, m), uniform op,
/// operand in [1, 9].
pub fn sample_task(
    rng: &mut ChaCha8Rng,
    length: usize,
    modulus: u32,
) -> Result<ToyTask, ToyError> {
    if length == 0 {
        return Err(ToyError::Configuration("task length must be >= 1".into()));
    }
    let start_value = rng.random_range(0..modulus);
    let mut value = start_value;
    let mut ops = Vec::with_capacity(length);
    for _ in 0..length {
        let op = match rng.random_range(0..3u8) {
            0 => Op::Add,
            1 => Op::Sub,
            _ => Op::Mul,
        };
        let operand = rng.random_range(1..=9u32);
        value = fold_op(value, op, operand, modulus);
        ops.push((op, operand));
    }
    Ok(ToyTask { start_value, ops, target_answer: value, modulus })
}

static STEP_EQUATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(-?\d+)\s*([+*-])\s*(-?\d+)\s*=\s*(-?\d+)").unwrap());

/// Exact soundness check for one rendered step: find the first `a <op> b = c`
/// and test c ≡ a <op> b (mod m). Unparsable text is an error, not a verdict.
pub fn oracle_step_check(step_text: &str, modulus: u32) -> Result<u8, ToyError> {
    let caps = STEP_EQUATION
        .captures(step_text)
        .ok_or_else(|| ToyError::Parse(format!("no step equation in {step_text:?}")))?;
    let num = |i: usize| -> Result<i64, ToyError> {
        caps[i].parse::<i64>().map_err(|e| ToyError::Parse(format!("bad number in step: {e}")))
    };
    let (a, b, c) = (num(1)?, num(3)?, num(4)?);
    let m = modulus as i64;
    let lhs = match &caps[2] {
        "+" => a + b,
        "-" => a - b,
        _ => a * b,
    };
    Ok(u8::from(lhs.rem_euclid(m) == c.rem_euclid(m)))
}
