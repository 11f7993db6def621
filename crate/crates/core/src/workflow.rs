//! Stage drivers behind the command-line front end.
//!
//! Every stage reads and writes fixed file names under the output directory:
//!
//! ```text
//! <out>/<subject>/stage1.report
//! <out>/<subject>/stage2.report, w_ridge.fmat
//! <out>/<subject>/significance.report, significance_null.fmat
//! <out>/<subject>/ica_mixing.fmat, ica_sources.fmat, ica_maps.fmat, ica.manifest
//! <out>/group/group_maps.fmat, group_coords.ctbl
//! <out>/similarity/profiles.tsv, features.fmat, dominance.tsv
//! <out>/similarity/clusters.tsv, dendrogram.tsv
//! <out>/<command>.manifest            (run.manifest for `pipeline`)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SynthKind};
use crate::data_model::{
    encode_coords, encode_matrix, read_atlas, read_coords, read_matrix, CoordinateTable, SubjectData,
    TimeSeriesMatrix,
};
use crate::error::{Error, Result};
use crate::ica::{backproject, embed_sources, fastica, group_ica_baseline};
use crate::selection::{
    parse_voxel_list, run_stage1, run_stage2_on, significance_test_model, Stage2Result,
};
use crate::similarity::{
    cluster_profiles, cohort_dominance, common_space_maps, dominance_tsv, feature_matrix, parse_profiles_tsv,
    profiles_tsv, similarity_profiles, union_mask,
};
use crate::synth::{gen_source_cohort_excluding, gen_var_subject, write_source_cohort, write_var_cohort};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Stage1,
    Stage2,
    Significance,
    Ica,
    GroupIca,
    Similarity,
    Cluster,
    Pipeline,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Stage1 => "stage1",
            Command::Stage2 => "stage2",
            Command::Significance => "significance",
            Command::Ica => "ica",
            Command::GroupIca => "group-ica",
            Command::Similarity => "similarity",
            Command::Cluster => "cluster",
            Command::Pipeline => "pipeline",
        }
    }

    fn manifest_name(self) -> String {
        match self {
            Command::Pipeline => "run.manifest".into(),
            c => format!("{}.manifest", c.as_str()),
        }
    }
}

/// The stages `pipeline` chains, in order.
pub const PIPELINE: [Command; 7] = [
    Command::Stage1,
    Command::Stage2,
    Command::Significance,
    Command::Ica,
    Command::GroupIca,
    Command::Similarity,
    Command::Cluster,
];

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    /// Output paths relative to the output directory, with their SHA-256.
    pub outputs: Vec<(String, String)>,
    /// Wall time per stage in seconds.
    pub times: Vec<(String, f64)>,
    pub manifest: PathBuf,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    outputs: Vec<(String, String)>,
    seeds: Vec<(String, u64)>,
}

impl Ctx<'_> {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.retain(|(r, _)| r != rel);
        self.outputs.push((rel.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn write_matrix(&mut self, rel: &str, m: ArrayView2<'_, f64>) -> Result<()> {
        self.write(rel, &encode_matrix(m))
    }

    fn read_text(&self, rel: &str) -> Result<String> {
        let path = self.out.join(rel);
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    fn read_matrix(&self, rel: &str) -> Result<Array2<f64>> {
        read_matrix(self.out.join(rel))
    }
}

/// Subject directory names of a cohort, ascending unless listed explicitly.
pub fn list_subjects(dir: &Path, explicit: &[String]) -> Result<Vec<String>> {
    if !explicit.is_empty() {
        return Ok(explicit.to_vec());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("sub-") && entry.path().is_dir() {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::NoSubjects { dir: dir.to_path_buf() });
    }
    Ok(names)
}

/// Loads `data.fmat`, `atlas.atls` and (if present) `coords.ctbl`.
pub fn load_subject(dir: &Path, cfg: &RunConfig) -> Result<SubjectData> {
    let data = TimeSeriesMatrix::new(read_matrix(dir.join("data.fmat"))?)?;
    let atlas = read_atlas(dir.join("atlas.atls"))?;
    let coords_path = dir.join("coords.ctbl");
    let coords = if coords_path.exists() { Some(read_coords(&coords_path)?) } else { None };
    let split = cfg.split_for(data.time_points())?;
    SubjectData::prepare(data, atlas, coords, split, cfg.scale)
}

fn subject_coords(dir: &Path) -> Result<CoordinateTable> {
    read_coords(dir.join("coords.ctbl"))
}

fn subject_seed(base: u64, s: usize) -> u64 {
    base.wrapping_add(s as u64)
}

/// Runs `command` inside a thread pool of `cfg.threads` workers and writes its
/// manifest.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(command, cfg))
}

fn run_in_pool(command: Command, cfg: &RunConfig) -> Result<RunSummary> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut ctx = Ctx {
        cfg,
        out,
        outputs: Vec::new(),
        seeds: vec![("seed".into(), cfg.seed)],
    };
    let stages: Vec<Command> = if command == Command::Pipeline { PIPELINE.to_vec() } else { vec![command] };
    let mut times = Vec::new();
    let start = Instant::now();
    for stage in stages {
        log::info!("{}: starting", stage.as_str());
        let t = Instant::now();
        match stage {
            Command::Synth => synth(&mut ctx)?,
            Command::Stage1 => stage1(&mut ctx)?,
            Command::Stage2 => stage2(&mut ctx)?,
            Command::Significance => significance(&mut ctx)?,
            Command::Ica => ica(&mut ctx)?,
            Command::GroupIca => group_ica(&mut ctx)?,
            Command::Similarity => similarity(&mut ctx)?,
            Command::Cluster => cluster(&mut ctx)?,
            Command::Pipeline => unreachable!("expanded above"),
        }
        let secs = t.elapsed().as_secs_f64();
        log::info!("{}: done in {secs:.2}s", stage.as_str());
        times.push((stage.as_str().to_string(), secs));
    }
    times.push(("total".into(), start.elapsed().as_secs_f64()));
    ctx.outputs.sort();
    let manifest = ctx.out.join(command.manifest_name());
    let text = manifest_text(command, cfg, &ctx.outputs, &ctx.seeds, &times);
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(RunSummary {
        outputs: ctx.outputs,
        times,
        manifest,
    })
}

/// `key = value` lines; everything except the `runtime.` and `time.` entries
/// is a function of the inputs and the configuration.
fn manifest_text(
    command: Command,
    cfg: &RunConfig,
    outputs: &[(String, String)],
    seeds: &[(String, u64)],
    times: &[(String, f64)],
) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "version = {VERSION}");
    let _ = writeln!(m, "command = {}", command.as_str());
    let _ = writeln!(m, "config_hash = {}", cfg.hash());
    for (k, v) in seeds {
        let _ = writeln!(m, "{k} = {v}");
    }
    for (rel, hash) in outputs {
        let _ = writeln!(m, "output.{rel} = {hash}");
    }
    let _ = writeln!(m, "runtime.threads = {}", rayon::current_num_threads());
    for (stage, secs) in times {
        let _ = writeln!(m, "time.{stage} = {secs:.3}");
    }
    m
}

fn synth(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let out = ctx.out.clone();
    match cfg.synth.kind {
        SynthKind::Var => {
            let subjects = (0..cfg.synth.subjects)
                .into_par_iter()
                .map(|s| gen_var_subject(&cfg.var_spec(s)?))
                .collect::<Result<Vec<_>>>()?;
            write_var_cohort(&out, &subjects)?;
        }
        SynthKind::Sources => {
            let spec = cfg.source_spec();
            write_source_cohort(&out, &gen_source_cohort_excluding(&spec, None)?)?;
            if let Some(e) = cfg.synth.exclude_source {
                let group = gen_source_cohort_excluding(&spec, Some(e))?;
                write_source_cohort(&out.join("group_input"), &group)?;
            }
        }
    }
    for path in files_under(&out)? {
        let rel = path.strip_prefix(&out).expect("listed under out").to_string_lossy().replace('\\', "/");
        if rel.ends_with(".manifest") {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        ctx.outputs.push((rel, sha256_hex(&bytes)));
    }
    Ok(())
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn cohort(ctx: &Ctx<'_>) -> Result<Vec<String>> {
    list_subjects(&ctx.cfg.cohort_dir, &ctx.cfg.subjects)
}

fn stage1(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    for name in cohort(ctx)? {
        let subject = load_subject(&cfg.cohort_dir.join(&name), cfg)?;
        let result = run_stage1(&subject, &cfg.stage1)?;
        log::info!("{name}: stage 1 kept {} voxels", result.union.len());
        ctx.write(&format!("{name}/stage1.report"), result.report().as_bytes())?;
    }
    Ok(())
}

fn stage2(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    for name in cohort(ctx)? {
        let subject = load_subject(&cfg.cohort_dir.join(&name), cfg)?;
        let union = parse_voxel_list(&ctx.read_text(&format!("{name}/stage1.report"))?, "selected_voxels")?;
        let result = run_stage2_on(&subject, &union, &cfg.stage2)?;
        log::info!("{name}: stage 2 kept {} of {} voxels", result.selected.len(), union.len());
        ctx.write(&format!("{name}/stage2.report"), result.report().as_bytes())?;
        ctx.write_matrix(&format!("{name}/w_ridge.fmat"), result.w_ridge.view())?;
    }
    Ok(())
}

/// Stage-1 voxel set and ridge model stored by `stage2`.
fn stored_model(ctx: &Ctx<'_>, name: &str) -> Result<(Vec<usize>, Array2<f64>)> {
    let report = ctx.read_text(&format!("{name}/stage2.report"))?;
    let voxel_set = parse_voxel_list(&report, "stage1_voxels")?;
    let w = ctx.read_matrix(&format!("{name}/w_ridge.fmat"))?;
    if w.nrows() != voxel_set.len() {
        return Err(Error::DimensionMismatch(format!(
            "{name}: w_ridge has {} rows for {} stage-1 voxels",
            w.nrows(),
            voxel_set.len()
        )));
    }
    Ok((voxel_set, w))
}

fn significance(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    for (s, name) in cohort(ctx)?.into_iter().enumerate() {
        let subject = load_subject(&cfg.cohort_dir.join(&name), cfg)?;
        let (voxel_set, w) = stored_model(ctx, &name)?;
        let mut sig = cfg.significance();
        sig.seed = subject_seed(cfg.seed, s);
        ctx.seeds.push((format!("seed.significance.{name}"), sig.seed));
        let report = significance_test_model(&subject, &voxel_set, w.view(), &cfg.selection(), &sig)?;
        log::info!("{name}: {:.1}% of voxels significant", 100.0 * report.fraction_significant);
        ctx.write(&format!("{name}/significance.report"), report.report().as_bytes())?;
        ctx.write_matrix(&format!("{name}/significance_null.fmat"), report.null.view())?;
    }
    Ok(())
}

/// Component count that the data can support: at most `T − 1` and `N − 1`
/// (sources are centred across voxels).
pub fn clamp_components(requested: usize, t: usize, n: usize) -> usize {
    requested.min(t.saturating_sub(1)).min(n.saturating_sub(1)).max(1)
}

fn ica(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let names = cohort(ctx)?;
    let mut jobs = Vec::with_capacity(names.len());
    for (s, name) in names.iter().enumerate() {
        let subject = load_subject(&cfg.cohort_dir.join(name), cfg)?;
        let (voxel_set, w) = stored_model(ctx, name)?;
        let selected = Stage2Result::selected_from_model(&voxel_set, w.view());
        if selected.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "{name}: {} selected voxel(s); spatial ICA needs at least 2",
                selected.len()
            )));
        }
        jobs.push((s, subject, voxel_set, w, selected));
    }
    let results = jobs
        .par_iter()
        .map(|(s, subject, voxel_set, w, selected)| {
            let data = subject.series().select(Axis(0), selected).reversed_axes();
            let (t, n) = data.dim();
            let k = clamp_components(cfg.ica_k, t, n);
            let seed = subject_seed(cfg.seed, *s);
            let mut dec = fastica(data.view(), k, seed, &cfg.ica)?;
            dec.canonicalize();
            let q = backproject(w.view(), embed_sources(dec.sources.view(), selected, voxel_set)?.view())?.q;
            Ok((k, seed, dec, q))
        })
        .collect::<Result<Vec<_>>>()?;
    for ((s, _, _, _, selected), (k, seed, dec, q)) in jobs.iter().zip(results) {
        let name = &names[*s];
        if k != cfg.ica_k {
            log::warn!("{name}: {k} components instead of {} ({} selected voxels)", cfg.ica_k, selected.len());
        }
        if !dec.converged {
            log::warn!("{name}: fastICA stopped after {} iterations without converging", dec.iterations);
        }
        ctx.seeds.push((format!("seed.ica.{name}"), seed));
        ctx.write_matrix(&format!("{name}/ica_mixing.fmat"), dec.mixing.view())?;
        ctx.write_matrix(&format!("{name}/ica_sources.fmat"), dec.sources.view())?;
        ctx.write_matrix(&format!("{name}/ica_maps.fmat"), q.view())?;
        let mut m = String::new();
        let _ = writeln!(m, "subject = {name}");
        let _ = writeln!(m, "k = {k}");
        let _ = writeln!(m, "k_requested = {}", cfg.ica_k);
        let _ = writeln!(m, "seed = {seed}");
        let _ = writeln!(m, "voxels = {}", selected.len());
        let _ = writeln!(m, "iterations = {}", dec.iterations);
        let _ = writeln!(m, "converged = {}", dec.converged);
        ctx.write(&format!("{name}/ica.manifest"), m.as_bytes())?;
    }
    Ok(())
}

/// Coordinate table listing the given grid cells.
pub fn cells_to_coords(cells: &[usize], dims: [u32; 3]) -> Result<CoordinateTable> {
    let [_, ny, nz] = dims.map(|d| d as usize);
    let coords = cells
        .iter()
        .map(|&c| [(c / (ny * nz)) as i32, ((c / nz) % ny) as i32, (c % nz) as i32])
        .collect();
    CoordinateTable::new(dims, coords)
}

/// `T × |mask|` data of one subject placed on the common mask.
pub fn to_common_space(series: ArrayView2<'_, f64>, coords: &CoordinateTable, mask: &[usize]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((series.ncols(), mask.len()));
    for v in 0..coords.n_voxels() {
        let cell = coords.grid_index(v);
        let pos = mask
            .binary_search(&cell)
            .map_err(|_| Error::MaskMismatch(format!("voxel {v} lies outside the common mask")))?;
        out.column_mut(pos).assign(&series.row(v));
    }
    Ok(out)
}

fn group_ica(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    if let (Some(maps), Some(coords)) = (&cfg.group_maps, &cfg.group_coords) {
        // external maps: only check that they load and agree
        let m = read_matrix(maps)?;
        let c = read_coords(coords)?;
        if m.ncols() != c.n_voxels() {
            return Err(Error::MaskMismatch(format!(
                "{}: {} columns for {} coordinates",
                maps.display(),
                m.ncols(),
                c.n_voxels()
            )));
        }
        log::info!("group maps taken from {}", maps.display());
        return Ok(());
    }
    let dir = cfg.group_cohort_dir.clone().unwrap_or_else(|| cfg.cohort_dir.clone());
    let explicit = if cfg.group_cohort_dir.is_some() { &[][..] } else { &cfg.subjects[..] };
    let names = list_subjects(&dir, explicit)?;
    let subjects = names
        .iter()
        .map(|n| load_subject(&dir.join(n), cfg))
        .collect::<Result<Vec<_>>>()?;
    let tables = names.iter().map(|n| subject_coords(&dir.join(n))).collect::<Result<Vec<_>>>()?;
    let mask = union_mask(&tables.iter().collect::<Vec<_>>())?;
    let blocks = subjects
        .iter()
        .zip(&tables)
        .map(|(s, c)| to_common_space(s.series(), c, &mask))
        .collect::<Result<Vec<_>>>()?;
    let total_t: usize = blocks.iter().map(|b| b.nrows()).sum();
    let k = clamp_components(cfg.ica_k, total_t, mask.len());
    if k != cfg.ica_k {
        log::warn!("group ICA: {k} components instead of {}", cfg.ica_k);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let maps = group_ica_baseline(&views, k, cfg.seed, &cfg.ica)?;
    ctx.seeds.push(("seed.group_ica".into(), cfg.seed));
    ctx.write_matrix("group/group_maps.fmat", maps.view())?;
    ctx.write("group/group_coords.ctbl", &encode_coords(&cells_to_coords(&mask, tables[0].dims())?))?;
    Ok(())
}

fn group_inputs(ctx: &Ctx<'_>) -> Result<(Array2<f64>, CoordinateTable)> {
    match (&ctx.cfg.group_maps, &ctx.cfg.group_coords) {
        (Some(m), Some(c)) => Ok((read_matrix(m)?, read_coords(c)?)),
        _ => Ok((
            ctx.read_matrix("group/group_maps.fmat")?,
            read_coords(ctx.out.join("group/group_coords.ctbl"))?,
        )),
    }
}

fn similarity(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let names = cohort(ctx)?;
    let tables = names
        .iter()
        .map(|n| subject_coords(&cfg.cohort_dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    let maps = names
        .iter()
        .map(|n| ctx.read_matrix(&format!("{n}/ica_maps.fmat")))
        .collect::<Result<Vec<_>>>()?;
    let (group, group_coords) = group_inputs(ctx)?;
    if group.ncols() != group_coords.n_voxels() {
        return Err(Error::MaskMismatch(format!(
            "group maps have {} columns for {} coordinates",
            group.ncols(),
            group_coords.n_voxels()
        )));
    }
    let mut all: Vec<&CoordinateTable> = tables.iter().collect();
    all.push(&group_coords);
    let mask = union_mask(&all)?;
    let sigma = cfg.blur_sigma;
    let cohort_maps = maps
        .par_iter()
        .zip(&tables)
        .map(|(q, c)| common_space_maps(q.view(), c, &mask, sigma))
        .collect::<Result<Vec<_>>>()?;
    let group_maps = common_space_maps(group.t(), &group_coords, &mask, sigma)?;
    let profiles = similarity_profiles(&cohort_maps, &group_maps)?;
    let dominance = cohort_dominance(&profiles, names.len());
    ctx.write("similarity/profiles.tsv", profiles_tsv(&profiles, &names).as_bytes())?;
    ctx.write_matrix("similarity/features.fmat", feature_matrix(&profiles)?.view())?;
    ctx.write("similarity/dominance.tsv", dominance_tsv(&profiles, &dominance, &names).as_bytes())?;
    Ok(())
}

fn cluster(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let (names, profiles) = parse_profiles_tsv(&ctx.read_text("similarity/profiles.tsv")?)?;
    let result = cluster_profiles(&profiles, cfg.n_clusters, cfg.distance, cfg.linkage)?;
    ctx.write("similarity/clusters.tsv", result.clusters_tsv(&profiles, &names).as_bytes())?;
    ctx.write("similarity/dendrogram.tsv", result.dendrogram_tsv().as_bytes())?;
    Ok(())
}
