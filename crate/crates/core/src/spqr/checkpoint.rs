//! Surrogate checkpoint: a magic line, one JSON header line, then each
//! site's flattened weights as little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DesignRecord, Mlp, NetSpec, SiteModel, SplineBasis, SurrogateModel};
use crate::dependence::SiteSet;
use crate::error::{NpmmError, Result};
use crate::vecchia::VecchiaStructure;

pub const CHECKPOINT_MAGIC: &str = "NPMM-SURROGATE 1";

#[derive(Serialize, Deserialize)]
struct Header {
    structure_hash: String,
    structure: VecchiaStructure,
    sites: SiteSet,
    spec: NetSpec,
    basis: SplineBasis,
    design: DesignRecord,
    models: Vec<ModelHeader>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    position: usize,
    n_params: usize,
    loss_trace: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, model: &SurrogateModel) -> Result<()> {
    let header = Header {
        structure_hash: model.structure.hash(),
        structure: model.structure.clone(),
        sites: model.sites.clone(),
        spec: model.spec.clone(),
        basis: model.basis.clone(),
        design: model.design.clone(),
        models: model
            .models
            .iter()
            .map(|m| ModelHeader {
                position: m.position,
                n_params: m.net.n_params(),
                loss_trace: m.loss_trace.clone(),
            })
            .collect(),
    };
    let file = File::create(path).map_err(|e| NpmmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let json = serde_json::to_string(&header).map_err(|e| NpmmError::Serde(e.to_string()))?;
    let io = |e| NpmmError::io(path, e);
    writeln!(w, "{CHECKPOINT_MAGIC}").map_err(io)?;
    writeln!(w, "{json}").map_err(io)?;
    for m in &model.models {
        for v in m.net.flatten() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<SurrogateModel> {
    let file = File::open(path).map_err(|e| NpmmError::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| NpmmError::io(path, e);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(NpmmError::Incompatible(format!(
            "{} is not a surrogate checkpoint (first line {:?})",
            path.display(),
            line.trim_end()
        )));
    }
    line.clear();
    r.read_line(&mut line).map_err(io)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| NpmmError::Serde(e.to_string()))?;
    if header.structure.hash() != header.structure_hash {
        return Err(NpmmError::Incompatible(format!(
            "checkpoint structure hash {} does not match its neighbour lists",
            header.structure_hash
        )));
    }
    let mut models = Vec::with_capacity(header.models.len());
    for mh in header.models {
        let mut buf = vec![0u8; mh.n_params * 8];
        r.read_exact(&mut buf).map_err(io)?;
        let flat: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut net = Mlp::zeros(&header.spec);
        net.assign(&flat)?;
        models.push(SiteModel {
            position: mh.position,
            net,
            loss_trace: mh.loss_trace,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(NpmmError::Incompatible(format!(
            "{} trailing bytes after the last weight tensor",
            rest.len()
        )));
    }
    Ok(SurrogateModel {
        sites: header.sites,
        structure: header.structure,
        spec: header.spec,
        basis: header.basis,
        design: header.design,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::SiteSet;
    use crate::spqr::{train_surrogate, Design};
    use crate::vecchia::build_structure;

    #[test]
    fn roundtrip_is_bit_exact() {
        let s = SiteSet::new(vec![[0.1, 0.2], [0.7, 0.4], [0.5, 0.9]], vec![1, 2, 1]).unwrap();
        let v = build_structure(&s, 2).unwrap();
        let spec = NetSpec {
            hidden: vec![5, 4],
            epochs: 2,
            batch_size: 50,
            ..NetSpec::default_for(6)
        };
        let m = train_surrogate(&s, &v, &spec, &SplineBasis::cubic15(), &Design::default(), 100, 3)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ckpt");
        write_checkpoint(&p, &m).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back, m);

        let mut bytes = std::fs::read(&p).unwrap();
        bytes.push(0);
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_checkpoint(&p).is_err());
    }
}
