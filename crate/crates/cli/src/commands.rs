use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cemfem::contact::{ConductanceProfile, ProfileJson, ProfileKind};
use cemfem::forward::{ConductivityField, CurrentPattern, ForwardSystem};
use cemfem::inverse::{self, LMConfig, MeasurementFrame, ParameterVector, PriorConfig, Truth};
use cemfem::mesh::{ElectrodeLayout, ElementOrder, Mesh};
use cemfem::phantom::Phantom;
use cemfem::study::{self, ModelCase};
use cemfem::{Error, Result};

use crate::config::*;

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    if let Some(n) = cfg.threads {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let out = cfg.output.as_path();
    match &cfg.command {
        Command::Mesh(a) => mesh(a, out),
        Command::Forward(a) => forward(a, out),
        Command::Study(s) => match s {
            StudyCommand::Difference(a) => difference(a, out, false),
            StudyCommand::Scaling(a) => difference(a, out, true),
            StudyCommand::Rates(a) => rates(a, out, false),
            StudyCommand::Deriv(a) => rates(a, out, true),
        },
        Command::Synth(a) => synth(a, cfg.seed, out),
        Command::Invert(InvertCommand::Homogeneous(a)) => homogeneous(a, out),
        Command::Invert(InvertCommand::Map(a)) => map(a, out),
    }
}

fn order(o: u8) -> Result<ElementOrder> {
    match o {
        1 => Ok(ElementOrder::Linear),
        2 => Ok(ElementOrder::Quadratic),
        _ => Err(Error::Parameter(format!("element order must be 1 or 2, got {o}"))),
    }
}

fn layout(name: &str) -> Result<ElectrodeLayout> {
    if Path::new(name).is_file() {
        let arcs: Vec<[f64; 2]> = serde_json::from_str(&fs::read_to_string(name)?)?;
        ElectrodeLayout::new(arcs)
    } else {
        ElectrodeLayout::named(name)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json(out: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    fs::write(out.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn profile(layout: &ElectrodeLayout, model: &str, zeta: f64, contacts: Option<&PathBuf>) -> Result<ConductanceProfile> {
    match contacts {
        Some(path) => {
            let p = ConductanceProfile::from_json(&read_json::<ProfileJson>(path)?)?;
            if p.layout() != layout {
                return Err(Error::Layout("contact file electrodes differ from the mesh layout".into()));
            }
            Ok(p)
        }
        None => ConductanceProfile::uniform(layout, model.parse()?, zeta),
    }
}

fn sigma(value: f64, phantom: Option<&PathBuf>) -> Result<ConductivityField> {
    match phantom {
        Some(path) => {
            let p: Phantom = read_json(path)?;
            p.validate()?;
            Ok(ConductivityField::Phantom(p))
        }
        None => Ok(ConductivityField::Constant(value)),
    }
}

fn mesh(a: &MeshArgs, out: &Path) -> Result<()> {
    let m = Mesh::build(a.level, &layout(&a.layout)?, order(a.order)?)?;
    write_json(out, "mesh.json", &m.to_json())?;
    println!("mesh level {} with {} nodes", a.level, m.nodes().len());
    Ok(())
}

fn forward(a: &ForwardArgs, out: &Path) -> Result<()> {
    let lay = layout(&a.mesh.layout)?;
    let mesh = Arc::new(Mesh::build(a.mesh.level, &lay, order(a.mesh.order)?)?);
    let prof = profile(&lay, &a.model.model, a.model.zeta, a.model.contacts.as_ref())?;
    let sys = ForwardSystem::new(mesh, &sigma(a.model.sigma, a.model.phantom.as_ref())?, &prof)?;
    let map = sys.measurement_map()?;
    println!("reciprocity asymmetry {:.3e}", map.relative_asymmetry());
    write_json(out, "measurement_map.json", &map.rows())?;
    let patterns = match &a.pattern {
        Some(text) => {
            let currents = text
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parameter(format!("bad current {t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if currents.len() != lay.len() {
                return Err(Error::Parameter(format!("pattern has {} entries for {} electrodes", currents.len(), lay.len())));
            }
            vec![CurrentPattern::new(currents)?]
        }
        None => CurrentPattern::reference_set(lay.len()),
    };
    let sols = sys.solve_many(&patterns)?;
    let json: Vec<_> = sols.iter().map(|s| s.to_json()).collect();
    write_json(out, "solutions.json", &json)?;
    if a.nodal {
        for (k, s) in sols.iter().enumerate() {
            s.write_nodal_csv(create(out, &format!("u_{k}.csv"))?)?;
        }
    }
    println!("solved {} patterns", sols.len());
    Ok(())
}

fn difference(a: &SweepArgs, out: &Path, scaled: bool) -> Result<()> {
    if !(a.lo > 0.0 && a.hi > a.lo && a.points >= 2) {
        return Err(Error::Parameter("ratio sweep needs 0 < lo < hi and at least 2 points".into()));
    }
    let ratios = study::ratio_grid(a.points, a.lo, a.hi);
    let mesh = Arc::new(Mesh::build(a.level, &ElectrodeLayout::default8(), ElementOrder::Linear)?);
    let peak = if scaled {
        let curve = study::scaling_curve(&mesh, &ratios);
        curve.write_csv(create(out, "scaling.csv")?)?;
        curve.peak()
    } else {
        let curve = study::difference_curve(&mesh, &ratios);
        curve.write_csv(create(out, "difference.csv")?)?;
        curve.peak()
    };
    match peak {
        Some((ratio, d)) => println!("peak {d:.4e} at ratio {ratio:.4e}"),
        None => return Err(Error::Numerical("no sweep point succeeded".into())),
    }
    Ok(())
}

fn rates(a: &RateArgs, out: &Path, derivatives: bool) -> Result<()> {
    let lay = layout(&a.layout)?;
    let sig = ConductivityField::Constant(a.sigma);
    let cases = a
        .models
        .iter()
        .map(|m| {
            let kind: ProfileKind = m.parse()?;
            let zeta = match kind {
                ProfileKind::Box => a.zeta_box,
                ProfileKind::Hat => a.zeta_hat,
                ProfileKind::Custom => return Err(Error::Parameter("studies use box or hat contacts".into())),
            };
            Ok(ModelCase::new(m.clone(), sig.clone(), ConductanceProfile::uniform(&lay, kind, zeta)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if derivatives {
        let table = study::derivative_convergence(&lay, &cases, &a.levels, a.reference)?;
        table.write_csv(create(out, "deriv_rates.csv")?)?;
    } else {
        let orders = a.orders.iter().map(|&o| order(o)).collect::<Result<Vec<_>>>()?;
        let table = study::convergence_study(&lay, &cases, &orders, &a.levels, a.reference)?;
        table.write_csv(create(out, "rates.csv")?)?;
        for fit in &table.fits {
            println!("{} P{} slope {:.3}", fit.model, fit.order.degree(), fit.slope);
        }
    }
    Ok(())
}

fn synth(a: &SynthArgs, seed: u64, out: &Path) -> Result<()> {
    let lay = layout(&a.layout)?;
    let phantom = match &a.phantom {
        Some(path) => read_json(path)?,
        None => Phantom::insulating_disk(0.03, [0.35, 0.6], 0.132),
    };
    phantom.validate()?;
    let truth = Truth {
        sigma: ConductivityField::Phantom(phantom),
        profile: profile(&lay, &a.model, a.zeta, a.contacts.as_ref())?.to_json(),
    };
    let frame = inverse::synthesize_data(
        &truth,
        &CurrentPattern::reference_set(lay.len()),
        a.fine_level,
        a.level,
        a.noise,
        seed,
    )?;
    fs::write(out.join("frame.json"), frame.to_json()?)?;
    println!("frame with {} voltages, noise std {:.4e}", frame.voltages.len(), frame.meta.noise_abs);
    Ok(())
}

fn load_frame(path: &Path) -> Result<MeasurementFrame> {
    MeasurementFrame::from_json(&fs::read_to_string(path)?)
}

fn lm(a: &FitArgs) -> LMConfig {
    LMConfig {
        max_iterations: a.max_iter,
        ..LMConfig::default()
    }
}

fn homogeneous(a: &FitArgs, out: &Path) -> Result<()> {
    let frame = load_frame(&a.data)?;
    let r = inverse::fit_homogeneous(&frame, a.level, a.model.parse()?, a.sigma0, a.zeta0, &lm(a))?;
    write_json(out, "fit.json", &r.contacts_json())?;
    r.write_iterations_csv(create(out, "iterations.csv")?)?;
    println!("sigma {:.6e}, relative discrepancy {:.3e}", r.sigma[0], r.relative_discrepancy);
    Ok(())
}

fn map(a: &MapArgs, out: &Path) -> Result<()> {
    let frame = load_frame(&a.fit.data)?;
    let prior: PriorConfig = match &a.prior {
        Some(path) => read_json(path)?,
        None => PriorConfig::default(),
    };
    let init = ParameterVector::homogeneous(a.fit.sigma0, &vec![a.fit.zeta0; frame.electrodes()])?;
    let r = inverse::reconstruct_map(&frame, a.fit.level, a.fit.model.parse()?, &prior, &init, &lm(&a.fit))?;
    let mesh = Mesh::build(a.fit.level, &frame.layout()?, ElementOrder::Linear)?;
    r.write_nodal_csv(&mesh, create(out, "sigma.csv")?)?;
    write_json(out, "contacts.json", &r.contacts_json())?;
    r.write_iterations_csv(create(out, "iterations.csv")?)?;
    println!(
        "{} iterations, relative discrepancy {:.3e}",
        r.history.last().map_or(0, |h| h.iter),
        r.relative_discrepancy
    );
    Ok(())
}
