//! Variational families as a vector copula plus one transport map per block.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::copulas::{BlockPartition, CopulaSpec, GvcFactor, GvcOrtho, Kvc};
use crate::error::{spec, Result};
use crate::layout::IndexMap;
use crate::maps::{LPattern, MapSpec};

/// Parameter layout is `λ = (λ_vc, λ_1, …, λ_M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    pub name: String,
    pub partition: BlockPartition,
    pub copula: CopulaSpec,
    pub maps: Vec<MapSpec>,
}

/// Standard normals and unit exponentials for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub normals: Vec<f64>,
    pub exps: Vec<f64>,
}

impl Assembly {
    pub fn new(name: impl Into<String>, partition: BlockPartition, copula: CopulaSpec, maps: Vec<MapSpec>) -> Result<Self> {
        let a = Assembly { name: name.into(), partition, copula, maps };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        self.copula.validate()?;
        if self.maps.len() != self.partition.n_blocks() {
            return Err(spec(format!(
                "{} maps given for {} blocks",
                self.maps.len(),
                self.partition.n_blocks()
            )));
        }
        for (j, (m, &s)) in self.maps.iter().zip(self.partition.sizes()).enumerate() {
            m.validate()?;
            if m.dim() != s {
                return Err(spec(format!("map {j} has dimension {} but block {j} has size {s}", m.dim())));
            }
        }
        if self.copula.dim() != self.partition.total() {
            return Err(spec(format!(
                "copula dimension {} differs from the parameter dimension {}",
                self.copula.dim(),
                self.partition.total()
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.partition.total()
    }

    pub fn index_map(&self) -> IndexMap {
        let mut m = IndexMap::default();
        m.extend_prefixed("vc.", &self.copula.index_map());
        for (j, map) in self.maps.iter().enumerate() {
            m.extend_prefixed(&format!("block{j}."), &map.index_map());
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.index_map().len()
    }

    pub fn n_copula_params(&self) -> usize {
        self.copula.n_params()
    }

    /// Offsets of each map's slice within `λ`.
    pub(crate) fn map_offsets(&self) -> Vec<usize> {
        let mut off = vec![self.copula.n_params()];
        for m in &self.maps {
            off.push(off.last().unwrap() + m.n_params());
        }
        off
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = self.copula.init(rng);
        for m in &self.maps {
            p.extend(m.init(rng));
        }
        p
    }

    pub fn noise_dims(&self) -> (usize, usize) {
        self.copula.noise_dims()
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Noise {
        let (nn, ne) = self.noise_dims();
        Noise {
            normals: (0..nn).map(|_| rng.sample(StandardNormal)).collect(),
            exps: (0..ne).map(|_| rng.sample(Exp1)).collect(),
        }
    }

    /// Builds a family from its name and the block sizes of `θ`.
    ///
    /// Named families: `GMF`, `G-F<p>`, `GC-F<p>`, `BLK`, `BLK-C`,
    /// `BLK(<map>)`, `BLK-C(<map>)`, `A1`…`A7`. Custom assemblies are written
    /// `<copula>&<map>` with copula one of `IND`, `GVC-F<p>`, `GVC-O`,
    /// `GVC-I`, `KVC-G`, `Nested(<outer>∘<inner>)`, and map one of `M1`, `M2`
    /// with optional options `M1(L=I|dense|band<k>|invband<k>)`, `M2(w=<k>)`
    /// and an optional `-YJ` suffix for a learned warp.
    pub fn from_family(family: &str, blocks: &[usize]) -> Result<Self> {
        let partition = BlockPartition::new(blocks.to_vec())?;
        let f: String = family.chars().filter(|c| !c.is_whitespace()).collect();
        let d = partition.total();
        let single = |map: MapSpec, copula: CopulaSpec| {
            Assembly::new(family.trim(), BlockPartition::new(vec![d])?, copula, vec![map])
        };
        let indep = CopulaSpec::Independence { dim: d };
        let upper = f.to_ascii_uppercase();
        match upper.as_str() {
            "GMF" => return single(MapSpec::M1 { dim: d, l: LPattern::Identity, warp: false }, indep),
            "BLK" | "BLK-C" => {
                let map = MapToken { kind: MapKind::M2 { w: 1 }, warp: upper == "BLK-C" };
                return Assembly::build(family.trim(), partition, indep, &map);
            }
            "A1" => return Assembly::from_family_named(family, "GVC-F5&M1", blocks),
            "A2" => return Assembly::from_family_named(family, "GVC-F5&M1-YJ", blocks),
            "A3" => return Assembly::from_family_named(family, "GVC-I&M1", blocks),
            "A4" => return Assembly::from_family_named(family, "GVC-I&M1-YJ", blocks),
            "A5" => return Assembly::from_family_named(family, "GVC-I&M2", blocks),
            "A6" => return Assembly::from_family_named(family, "GVC-I&M2-YJ", blocks),
            "A7" => return Assembly::from_family_named(family, "Nested(KVC-G∘GVC-I)&M1-YJ", blocks),
            _ => {}
        }
        for (prefix, warp) in [("GC-F", true), ("G-F", false)] {
            if let Some(rest) = upper.strip_prefix(prefix) {
                let p = parse_usize(rest, family)?;
                if p == 0 || p >= d {
                    return Err(spec(format!("{family}: factor rank p must satisfy 0 < p < d = {d}")));
                }
                return single(MapSpec::M2 { dim: d, rank: p, warp }, indep);
            }
        }
        for (prefix, warp) in [("BLK-C(", true), ("BLK(", false)] {
            if let Some(rest) = upper.strip_prefix(prefix) {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| spec(format!("{family}: missing closing parenthesis")))?;
                let mut map = parse_map(inner, family)?;
                map.warp |= warp;
                return Assembly::build(family.trim(), partition, indep, &map);
            }
        }
        let Some((cop, map)) = f.rsplit_once('&') else {
            return Err(spec(format!(
                "unknown family '{family}'; expected GMF, G-F<p>, GC-F<p>, BLK, BLK-C, A1..A7 or <copula>&<map>"
            )));
        };
        let map = parse_map(&map.to_ascii_uppercase(), family)?;
        let copula = parse_copula(cop, &partition, family)?;
        Assembly::build(family.trim(), partition, copula, &map)
    }

    fn from_family_named(alias: &str, family: &str, blocks: &[usize]) -> Result<Self> {
        let mut a = Assembly::from_family(family, blocks)?;
        a.name = format!("{} ({family})", alias.trim());
        Ok(a)
    }

    fn build(name: &str, partition: BlockPartition, copula: CopulaSpec, map: &MapToken) -> Result<Self> {
        let maps = partition.sizes().iter().map(|&s| map.spec(s)).collect();
        Assembly::new(name, partition, copula, maps)
    }
}

#[derive(Debug, Clone, Copy)]
enum MapKind {
    M1(LPattern),
    M2 { w: usize },
}

#[derive(Debug, Clone, Copy)]
struct MapToken {
    kind: MapKind,
    warp: bool,
}

impl MapToken {
    fn spec(&self, dim: usize) -> MapSpec {
        match self.kind {
            MapKind::M1(l) => MapSpec::M1 { dim, l, warp: self.warp },
            MapKind::M2 { w } => MapSpec::M2 { dim, rank: w.min(dim - 1), warp: self.warp },
        }
    }
}

fn parse_usize(s: &str, family: &str) -> Result<usize> {
    s.parse().map_err(|_| spec(format!("{family}: expected an integer, found '{s}'")))
}

/// `M1`, `M1(L=...)`, `M2`, `M2(w=k)`, each with an optional `-YJ`.
fn parse_map(s: &str, family: &str) -> Result<MapToken> {
    let (body, warp) = match s.strip_suffix("-YJ") {
        Some(b) => (b, true),
        None => (s, false),
    };
    let (head, opt) = match body.split_once('(') {
        Some((h, rest)) => {
            let o = rest.strip_suffix(')').ok_or_else(|| spec(format!("{family}: missing ')' in map options")))?;
            (h, Some(o))
        }
        None => (body, None),
    };
    let kind = match (head, opt) {
        ("M1", None) => MapKind::M1(LPattern::Identity),
        ("M1", Some(o)) => {
            let (key, val) = o
                .split_once('=')
                .ok_or_else(|| spec(format!("{family}: M1 options take the form L=<pattern>")))?;
            let pat = match (key, val) {
                ("L", "I") => LPattern::Identity,
                ("L", "DENSE") => LPattern::Dense,
                ("L", v) if v.starts_with("BAND") => LPattern::BandedL(parse_usize(&v[4..], family)?),
                ("L", v) if v.starts_with("INVBAND") => LPattern::BandedLinv(parse_usize(&v[7..], family)?),
                ("LINV", v) if v.starts_with("BAND") => LPattern::BandedLinv(parse_usize(&v[4..], family)?),
                _ => return Err(spec(format!("{family}: unknown M1 pattern '{o}'"))),
            };
            MapKind::M1(pat)
        }
        ("M2", None) => MapKind::M2 { w: 1 },
        ("M2", Some(o)) => {
            let w = o
                .strip_prefix("W=")
                .ok_or_else(|| spec(format!("{family}: M2 options take the form w=<rank>")))?;
            MapKind::M2 { w: parse_usize(w, family)? }
        }
        _ => return Err(spec(format!("{family}: unknown marginal '{s}', expected M1 or M2"))),
    };
    Ok(MapToken { kind, warp })
}

fn parse_flat_copula(s: &str, partition: &BlockPartition, family: &str) -> Result<CopulaSpec> {
    let u = s.to_ascii_uppercase();
    let d = partition.total();
    Ok(match u.as_str() {
        "IND" | "INDEPENDENCE" => CopulaSpec::Independence { dim: d },
        "GVC-O" | "GVC-I" => {
            let identity = u == "GVC-I";
            let s = partition.sizes();
            if s.len() < 2 {
                return Err(spec(format!("{family}: {u} couples two blocks but the partition has one")));
            }
            if identity && s[0] != s[1] {
                return Err(spec(format!(
                    "{family}: GVC-I requires its two coupled blocks to be equal-sized, got {} and {}",
                    s[0], s[1]
                )));
            }
            CopulaSpec::GvcOrtho(GvcOrtho::new(partition.clone(), identity)?)
        }
        "KVC-G" => CopulaSpec::Kvc(Kvc::new(partition.clone())),
        _ => {
            if let Some(p) = u.strip_prefix("GVC-F") {
                let p = parse_usize(p, family)?;
                if p == 0 || p >= d {
                    return Err(spec(format!("{family}: GVC-F rank p must satisfy 0 < p < d = {d}")));
                }
                CopulaSpec::GvcFactor(GvcFactor::new(partition.clone(), p)?)
            } else {
                return Err(spec(format!("{family}: unknown vector copula '{s}'")));
            }
        }
    })
}

/// `Nested(outer∘inner)` refines the first two blocks with the inner copula
/// and lets the outer copula see them merged.
fn parse_copula(s: &str, partition: &BlockPartition, family: &str) -> Result<CopulaSpec> {
    let Some(body) = s.strip_prefix("Nested(").or_else(|| s.strip_prefix("NESTED(")) else {
        return parse_flat_copula(s, partition, family);
    };
    let body = body
        .strip_suffix(')')
        .ok_or_else(|| spec(format!("{family}: missing ')' after the nested copula")))?;
    let (outer, inner) = body
        .split_once('∘')
        .or_else(|| body.split_once(','))
        .ok_or_else(|| spec(format!("{family}: nested copula is written Nested(<outer>∘<inner>)")))?;
    let sizes = partition.sizes();
    if sizes.len() < 2 {
        return Err(spec(format!("{family}: a nested copula needs at least two blocks")));
    }
    let inner_part = BlockPartition::new(sizes[..2].to_vec())?;
    let mut coarse = vec![sizes[0] + sizes[1]];
    coarse.extend_from_slice(&sizes[2..]);
    let outer_part = BlockPartition::new(coarse)?;
    let c = CopulaSpec::Nested {
        outer: Box::new(parse_flat_copula(outer, &outer_part, family)?),
        refine: 0,
        inner: Box::new(parse_flat_copula(inner, &inner_part, family)?),
    };
    c.validate()?;
    Ok(c)
}
