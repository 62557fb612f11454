use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use super::error::SimulatorError;
use super::simulator::{check_output, Simulator};

/// External simulator attached over a line-oriented subprocess contract.
///
/// For each evaluation the command is spawned, one line of space-separated
/// reals (`x` then `u` then the seed) is written to its standard input, and
/// one line of space-separated reals is read back as the output vector. The
/// child is killed if it exceeds the timeout.
pub struct SubprocessSimulator {
    pub command: String,
    pub args: Vec<String>,
    pub input_dim: usize,
    pub control_dim: usize,
    pub output_dim: usize,
    pub stochastic: bool,
    pub timeout: Duration,
}

impl SubprocessSimulator {
    pub fn new(
        command: &str,
        args: Vec<String>,
        input_dim: usize,
        control_dim: usize,
        output_dim: usize,
        stochastic: bool,
    ) -> Self {
        Self {
            command: command.to_string(),
            args,
            input_dim,
            control_dim,
            output_dim,
            stochastic,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Simulator for SubprocessSimulator {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    fn run(&self, x: &[f64], u: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        if x.len() != self.input_dim {
            return Err(SimulatorError::Dimension {
                what: "inputs",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if u.len() != self.control_dim {
            return Err(SimulatorError::Dimension {
                what: "control inputs",
                expected: self.control_dim,
                got: u.len(),
            });
        }
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SimulatorError::Subprocess(format!("spawn {}: {e}", self.command)))?;

        let mut line = String::new();
        for v in x.iter().chain(u.iter()) {
            line.push_str(&format!("{v:.17e} "));
        }
        line.push_str(&format!("{seed}\n"));
        child
            .stdin
            .take()
            .ok_or_else(|| SimulatorError::Subprocess("no stdin".into()))?
            .write_all(line.as_bytes())
            .map_err(|e| SimulatorError::Subprocess(format!("write stdin: {e}")))?;

        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| SimulatorError::Subprocess("no stdout".into()))?;
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let result = BufReader::new(stdout).read_line(&mut buf).map(|_| buf);
            let _ = tx.send(result);
        });

        let outcome = rx.recv_timeout(self.timeout);
        match outcome {
            Ok(Ok(buf)) => {
                let _ = child.wait();
                let _ = reader.join();
                let values: Result<Vec<f64>, _> = buf
                    .split_whitespace()
                    .map(|tok| tok.parse::<f64>())
                    .collect();
                let values = values.map_err(|e| {
                    SimulatorError::Subprocess(format!("unparseable output line {buf:?}: {e}"))
                })?;
                check_output(&values, self.output_dim, x)
            }
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(SimulatorError::Subprocess(format!("read stdout: {e}")))
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(SimulatorError::Subprocess(format!(
                    "timed out after {:?}",
                    self.timeout
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Echo the first field back: a 1-in 1-out identity simulator via the shell.
    #[test]
    fn line_protocol_round_trips() {
        let sim = SubprocessSimulator::new(
            "sh",
            vec!["-c".into(), "read a rest; echo $a".into()],
            1,
            0,
            1,
            false,
        );
        let out = sim.run(&[0.375], &[], 7).unwrap();
        assert_eq!(out, vec![0.375]);
    }

    #[test]
    fn timeout_kills_hung_child() {
        let sim = SubprocessSimulator::new("sleep", vec!["5".into()], 1, 0, 1, false)
            .with_timeout(Duration::from_millis(200));
        let err = sim.run(&[0.0], &[], 0);
        assert!(matches!(err, Err(SimulatorError::Subprocess(msg)) if msg.contains("timed out")));
    }
}
