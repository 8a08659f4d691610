//! Weight-storage accounting for a trained model.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::network::{Architecture, NetworkModel};
use crate::reservoir::{ProjectionMode, INPUT_DIM};

/// Scalars a streaming Hénon-type reservoir stores: four coefficients and two initial conditions.
pub const HENON_STREAMING_PARAMETERS: usize = 6;
/// Scalars a streaming logistic-map reservoir stores: r and the two initial values.
pub const LOGISTIC_STREAMING_PARAMETERS: usize = 3;
pub const DEFAULT_BYTES_PER_VALUE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub architecture: String,
    pub streaming_mode: bool,
    pub reservoir_parameter_count: usize,
    pub classifier_weight_count: usize,
    pub bytes_per_value: usize,
}

impl FootprintReport {
    pub fn total_count(&self) -> usize {
        self.reservoir_parameter_count + self.classifier_weight_count
    }

    pub fn estimated_bytes(&self) -> usize {
        self.total_count() * self.bytes_per_value
    }

    pub fn reservoir_bytes(&self) -> usize {
        self.reservoir_parameter_count * self.bytes_per_value
    }

    pub fn write_csv<W: Write>(&self, comment: Option<&str>, mut out: W) -> std::io::Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        writeln!(
            out,
            "architecture,streaming_mode,reservoir_parameter_count,classifier_weight_count,total_count,bytes_per_value,estimated_bytes"
        )?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.architecture,
            self.streaming_mode,
            self.reservoir_parameter_count,
            self.classifier_weight_count,
            self.total_count(),
            self.bytes_per_value,
            self.estimated_bytes()
        )
    }
}

impl fmt::Display for FootprintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = if self.streaming_mode {
            "streaming"
        } else {
            "materialized"
        };
        writeln!(f, "architecture        {}", self.architecture)?;
        writeln!(f, "reservoir mode      {mode}")?;
        writeln!(f, "reservoir values    {}", self.reservoir_parameter_count)?;
        writeln!(f, "classifier weights  {}", self.classifier_weight_count)?;
        writeln!(f, "total values        {}", self.total_count())?;
        write!(
            f,
            "estimated bytes     {} ({} bytes per value)",
            self.estimated_bytes(),
            self.bytes_per_value
        )
    }
}

/// Counts for an architecture without needing trained weights.
pub fn architecture_footprint(
    arch: &Architecture,
    mode: ProjectionMode,
    bytes_per_value: usize,
) -> FootprintReport {
    let streaming = mode == ProjectionMode::Streaming;
    FootprintReport {
        architecture: arch.to_string(),
        streaming_mode: streaming,
        reservoir_parameter_count: if streaming {
            HENON_STREAMING_PARAMETERS
        } else {
            arch.reservoir * INPUT_DIM
        },
        classifier_weight_count: arch.trainable_weights(),
        bytes_per_value,
    }
}

pub fn footprint(
    model: &NetworkModel,
    mode: ProjectionMode,
    bytes_per_value: usize,
) -> FootprintReport {
    architecture_footprint(&model.architecture, mode, bytes_per_value)
}

/// Extra scalars the Hénon-type streaming reservoir stores over a logistic one.
pub fn henon_logistic_delta() -> usize {
    HENON_STREAMING_PARAMETERS - LOGISTIC_STREAMING_PARAMETERS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_streaming() {
        let r = architecture_footprint(&Architecture::single(25), ProjectionMode::Streaming, 8);
        assert_eq!(r.reservoir_parameter_count, 6);
        assert_eq!(r.classifier_weight_count, 260);
        assert_eq!(r.estimated_bytes(), 266 * 8);
    }

    #[test]
    fn small_materialized() {
        let r = architecture_footprint(&Architecture::single(25), ProjectionMode::Materialized, 4);
        assert_eq!(r.reservoir_parameter_count, 19_625);
        assert_eq!(r.reservoir_bytes(), 19_625 * 4);
    }

    #[test]
    fn hidden_layer_terms() {
        let r = architecture_footprint(
            &Architecture::with_hidden(100, 60),
            ProjectionMode::Streaming,
            8,
        );
        assert_eq!(r.classifier_weight_count, 60 * 101 + 10 * 61);
    }

    #[test]
    fn streaming_count_ignores_reservoir_size() {
        for p in [1, 25, 100, 200, 5000] {
            let r = architecture_footprint(&Architecture::single(p), ProjectionMode::Streaming, 8);
            assert_eq!(r.reservoir_parameter_count, 6);
        }
        assert_eq!(henon_logistic_delta(), 3);
    }

    #[test]
    fn csv_has_header_and_row() {
        let r = architecture_footprint(&Architecture::single(25), ProjectionMode::Streaming, 8);
        let mut buf = Vec::new();
        r.write_csv(Some("x"), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "784:25:10,true,6,260,266,8,2128");
        assert!(r.to_string().contains("streaming"));
    }
}
