//! Window dataset persistence.
//!
//! Windows are stored in the named-array container (one array per channel,
//! stacked window-major) plus a JSON sidecar `<file>.meta.json` recording
//! counts, dimensions and units. Identifier metadata rides along as an
//! n x 5 array of (platoon id, leader id, study id, follower id, start
//! frame), exact in f64.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::container::{read_arrays, write_arrays};
use crate::data::platoon::{PlatoonWindow, WindowMeta, FUTURE_LEN, HISTORY_LEN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CHANNELS: [&str; 9] = [
    "x_lea_his",
    "x_stu_his",
    "x_fol_his",
    "v_lea_his",
    "v_stu_his",
    "v_fol_his",
    "dx1_his",
    "dx2_his",
    "x_stu_fut",
];

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes windows to `path` and a JSON sidecar next to it.
pub fn save_windows(path: &Path, windows: &[PlatoonWindow]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset("no windows to save"));
    }
    let n = windows.len();
    let stack = |get: &dyn Fn(&PlatoonWindow) -> &[f64], cols: usize| -> Tensor {
        let mut data = Vec::with_capacity(n * cols);
        for w in windows {
            data.extend_from_slice(get(w));
        }
        Tensor::from_vec(n, cols, data)
    };
    let mut arrays: Vec<(String, Tensor)> = vec![
        ("x_lea_his".into(), stack(&|w| &w.x_lea_his, HISTORY_LEN)),
        ("x_stu_his".into(), stack(&|w| &w.x_stu_his, HISTORY_LEN)),
        ("x_fol_his".into(), stack(&|w| &w.x_fol_his, HISTORY_LEN)),
        ("v_lea_his".into(), stack(&|w| &w.v_lea_his, HISTORY_LEN)),
        ("v_stu_his".into(), stack(&|w| &w.v_stu_his, HISTORY_LEN)),
        ("v_fol_his".into(), stack(&|w| &w.v_fol_his, HISTORY_LEN)),
        ("dx1_his".into(), stack(&|w| &w.dx1_his, HISTORY_LEN)),
        ("dx2_his".into(), stack(&|w| &w.dx2_his, HISTORY_LEN)),
        ("x_stu_fut".into(), stack(&|w| &w.x_stu_fut, FUTURE_LEN)),
    ];
    let mut meta_rows = Vec::with_capacity(n * 5);
    for w in windows {
        meta_rows.extend_from_slice(&[
            w.meta.platoon_id as f64,
            w.meta.lea_id as f64,
            w.meta.stu_id as f64,
            w.meta.fol_id as f64,
            w.meta.start_frame as f64,
        ]);
    }
    arrays.push(("meta_ids".into(), Tensor::from_vec(n, 5, meta_rows)));

    let meta = json!({
        "format_version": 1,
        "n_windows": n,
        "history_len": HISTORY_LEN,
        "future_len": FUTURE_LEN,
        "units": {"position": "ft", "speed": "ft/s", "rate_hz": 10},
    });
    write_arrays(path, &arrays, &meta)?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Loads windows written by [`save_windows`], validating every one.
pub fn load_windows(path: &Path) -> Result<Vec<PlatoonWindow>> {
    let (arrays, meta) = read_arrays(path)?;
    let n = meta
        .get("n_windows")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::BadContainer("missing n_windows".into()))? as usize;
    for name in CHANNELS.iter().chain(["meta_ids"].iter()) {
        if !arrays.contains_key(*name) {
            return Err(Error::MissingArray((*name).to_string()));
        }
    }
    let get = |name: &str| arrays.get(name).unwrap();
    let meta_ids = get("meta_ids");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = |name: &str| get(name).row(i).to_vec();
        let m = meta_ids.row(i);
        let w = PlatoonWindow {
            x_lea_his: row("x_lea_his"),
            x_stu_his: row("x_stu_his"),
            x_fol_his: row("x_fol_his"),
            v_lea_his: row("v_lea_his"),
            v_stu_his: row("v_stu_his"),
            v_fol_his: row("v_fol_his"),
            dx1_his: row("dx1_his"),
            dx2_his: row("dx2_his"),
            x_stu_fut: row("x_stu_fut"),
            meta: WindowMeta {
                platoon_id: m[0] as u64,
                lea_id: m[1] as i64,
                stu_id: m[2] as i64,
                fol_id: m[3] as i64,
                start_frame: m[4] as i64,
            },
        };
        w.validate()?;
        out.push(w);
    }
    Ok(out)
}
