use std::fmt;
use std::path::{Path, PathBuf};

use super::{Result, StoreError};
use crate::schema::Assignment;
use crate::tiers::{Backing, SyntheticLatency, TierConfig, TierId};

fn bad(line: usize, message: impl Into<String>) -> StoreError {
    StoreError::Manifest {
        line,
        message: message.into(),
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses one tier line:
/// `name,capacity_bytes,backing[,ns_per_access[,read_ns_per_byte[,write_ns_per_byte]]]`.
///
/// `backing` is `volatile`, `mmap:<path>`, `dir:<path>`, or a bare path (a
/// directory for the `disk` tier, a mapped file otherwise). Relative paths are
/// taken relative to `base`. `line` is only used in error messages.
pub fn parse_tier_config(text: &str, base: &Path, line: usize) -> Result<TierConfig> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() < 3 || parts.len() > 6 {
        return Err(bad(line, "expected name,capacity_bytes,backing[,latency...]"));
    }
    let name = parts[0];
    if name.is_empty() {
        return Err(bad(line, "empty tier name"));
    }
    let capacity: u64 = parts[1]
        .parse()
        .map_err(|_| bad(line, format!("bad capacity `{}`", parts[1])))?;
    let backing = match parts[2] {
        "volatile" => Backing::Volatile,
        b => match b.split_once(':') {
            Some(("mmap", p)) => Backing::MappedFile(resolve(base, p)),
            Some(("dir", p)) => Backing::Directory(resolve(base, p)),
            _ if name == "disk" => Backing::Directory(resolve(base, b)),
            _ => Backing::MappedFile(resolve(base, b)),
        },
    };
    let mut config = TierConfig::new(name, capacity, backing);
    if parts.len() > 3 {
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad(line, format!("bad latency `{s}`")))
        };
        let mut latency = SyntheticLatency::per_access(num(parts[3])?);
        if let Some(r) = parts.get(4) {
            latency.read_ns_per_byte = num(r)?;
        }
        if let Some(w) = parts.get(5) {
            latency.write_ns_per_byte = num(w)?;
        }
        config = config.with_latency(latency);
    }
    Ok(config)
}

/// Parses a tier config file: one tier line per non-empty, non-`#` line.
/// Tiers with names other than dram/pmem/disk get ids 3, 4, ... in order.
pub fn parse_tier_configs(text: &str, base: &Path) -> Result<Vec<TierConfig>> {
    let mut out = Vec::new();
    let mut next_ext = 3u8;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut config = parse_tier_config(line, base, n + 1)?;
        if TierId::from_name(&config.name).is_none() {
            config = config.with_id(TierId(next_ext));
            next_ext += 1;
        }
        if out.iter().any(|c: &TierConfig| c.name == config.name) {
            return Err(bad(n + 1, format!("duplicate tier `{}`", config.name)));
        }
        out.push(config);
    }
    Ok(out)
}

pub(crate) fn format_tier_config(c: &TierConfig) -> String {
    let backing = match &c.backing {
        Backing::Volatile => "volatile".to_string(),
        Backing::MappedFile(p) => format!("mmap:{}", p.display()),
        Backing::Directory(p) => format!("dir:{}", p.display()),
    };
    let mut s = format!("{},{},{}", c.name, c.capacity, backing);
    if let Some(l) = c.latency {
        s.push_str(&format!(",{},{},{}", l.per_access_ns, l.read_ns_per_byte, l.write_ns_per_byte));
    }
    s
}

/// Store description: tiers, the schema file, and any field assignment that
/// overrides the schema's preferred tags.
///
/// ```text
/// tier pmem,67108864,mmap:pmem.arena
/// tier disk,1073741824,dir:blobs
/// schema person.schema
/// assign image=disk
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub tiers: Vec<TierConfig>,
    pub schema: Option<PathBuf>,
    pub assignment: Assignment,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Manifest> {
        let mut m = Manifest::default();
        let mut tier_lines = String::new();
        let mut tier_line_numbers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match key {
                "tier" => {
                    tier_lines.push_str(rest);
                    tier_lines.push('\n');
                    tier_line_numbers.push(n + 1);
                }
                "schema" => m.schema = Some(resolve(base, rest)),
                "assign" => {
                    let (field, tier) = rest
                        .split_once('=')
                        .ok_or_else(|| bad(n + 1, "expected assign <field>=<tier>"))?;
                    let tier = TierId::from_name(tier.trim())
                        .ok_or_else(|| bad(n + 1, format!("unknown tier `{}`", tier.trim())))?;
                    m.assignment.insert(field.trim().to_string(), tier);
                }
                other => return Err(bad(n + 1, format!("unknown directive `{other}`"))),
            }
        }
        m.tiers = parse_tier_configs(&tier_lines, base).map_err(|e| match e {
            StoreError::Manifest { line, message } => bad(tier_line_numbers[line - 1], message),
            e => e,
        })?;
        Ok(m)
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tiers {
            writeln!(f, "tier {}", format_tier_config(t))?;
        }
        if let Some(s) = &self.schema {
            writeln!(f, "schema {}", s.display())?;
        }
        for (field, tier) in &self.assignment {
            writeln!(f, "assign {field}={tier}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_lines() {
        let base = Path::new("/data");
        let c = parse_tier_config("pmem,4096,mmap:p.arena,100", base, 1).unwrap();
        assert_eq!(c.id, TierId::PMEM);
        assert_eq!(c.backing, Backing::MappedFile("/data/p.arena".into()));
        assert_eq!(c.latency, Some(SyntheticLatency::per_access(100.0)));
        let c = parse_tier_config("disk,10,blobs", base, 1).unwrap();
        assert_eq!(c.backing, Backing::Directory("/data/blobs".into()));
        let c = parse_tier_config("dram, 10, volatile", base, 1).unwrap();
        assert_eq!(c.backing, Backing::Volatile);
        assert!(c.latency.is_none());
        let c = parse_tier_config("disk,10,dir:/abs,0,0.5,2", base, 1).unwrap();
        assert_eq!(c.latency.unwrap().write_ns_per_byte, 2.0);
        assert!(parse_tier_config("pmem,lots,volatile", base, 3).is_err());
        assert!(parse_tier_config("pmem,1", base, 3).is_err());
        assert!(parse_tier_config("pmem,1,volatile,-4", base, 3).is_err());
    }

    #[test]
    fn extension_ids_and_duplicates() {
        let cfgs = parse_tier_configs("# tiers\nssd,10,volatile\ndram,10,volatile\nhdd,10,volatile\n", Path::new(".")).unwrap();
        let ids: Vec<_> = cfgs.iter().map(|c| c.id).collect();
        assert_eq!(ids, [TierId(3), TierId::DRAM, TierId(4)]);
        let err = parse_tier_configs("dram,1,volatile\ndram,2,volatile", Path::new(".")).unwrap_err();
        assert!(matches!(err, StoreError::Manifest { line: 2, .. }));
    }

    #[test]
    fn manifest_round_trip() {
        let text = "tier pmem,4096,mmap:/x/p.arena\ntier disk,8192,dir:/x/d,5,1,1\nschema /x/person.schema\nassign image=disk\n";
        let m = Manifest::parse(text, Path::new("/")).unwrap();
        assert_eq!(m.tiers.len(), 2);
        assert_eq!(m.assignment["image"], TierId::DISK);
        assert_eq!(Manifest::parse(&m.to_string(), Path::new("/")).unwrap(), m);
        let err = Manifest::parse("tier pmem,4096,volatile\n\ntier oops", Path::new("/")).unwrap_err();
        assert!(matches!(err, StoreError::Manifest { line: 3, .. }), "{err}");
        assert!(Manifest::parse("frobnicate", Path::new("/")).is_err());
    }
}
