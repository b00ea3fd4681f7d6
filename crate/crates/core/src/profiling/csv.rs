use std::fmt::Write;
use std::str::FromStr;

use super::{DeviceProfile, FieldProfile, Profile, ProfileError, Result};

const SECTIONS: [(&str, &str); 4] = [
    ("fields:", "name,F,B"),
    ("devices:", "name,S,P"),
    ("C:", "field,device,ns"),
    ("R:", "field,device,ns"),
];

impl Profile {
    /// Sectioned CSV; each section line is followed by its column header.
    /// Numbers use the shortest exact decimal form, so import is lossless.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header = |out: &mut String, k: usize| {
            writeln!(out, "{}\n{}", SECTIONS[k].0, SECTIONS[k].1).unwrap();
        };
        header(&mut out, 0);
        for f in &self.fields {
            writeln!(out, "{},{},{}", f.name, f.f, f.b).unwrap();
        }
        header(&mut out, 1);
        for d in &self.devices {
            writeln!(out, "{},{},{}", d.name, d.s, d.p).unwrap();
        }
        for (k, m) in [(2, &self.c), (3, &self.r)] {
            header(&mut out, k);
            for (i, f) in self.fields.iter().enumerate() {
                for (j, d) in self.devices.iter().enumerate() {
                    writeln!(out, "{},{},{}", f.name, d.name, m[i][j]).unwrap();
                }
            }
        }
        out
    }

    /// Parses profile CSV. Every field/device pair needs a C row; missing R
    /// rows count as 0. Blank lines and `#` comments are skipped.
    pub fn from_csv(text: &str) -> Result<Profile> {
        let bad = |line: usize, message: String| ProfileError::Malformed { line, message };
        let mut fields = Vec::new();
        let mut devices = Vec::new();
        let mut entries: [Vec<(usize, String, String, f64)>; 2] = [Vec::new(), Vec::new()];
        let mut section: Option<usize> = None;
        let mut seen = [false; 4];
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(k) = SECTIONS.iter().position(|(s, _)| *s == line) {
                if seen[k] {
                    return Err(bad(line_no, format!("section `{line}` repeated")));
                }
                seen[k] = true;
                section = Some(k);
                continue;
            }
            let Some(k) = section else {
                return Err(bad(line_no, "data before any section".into()));
            };
            if line.replace(' ', "") == SECTIONS[k].1 {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
                return Err(bad(line_no, format!("expected `{}`", SECTIONS[k].1)));
            }
            fn num<T: FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
                s.parse().map_err(|_| ProfileError::Malformed {
                    line,
                    message: format!("bad {what} `{s}`"),
                })
            }
            match k {
                0 => fields.push(FieldProfile {
                    name: cols[0].to_string(),
                    f: num(cols[1], line_no, "F")?,
                    b: num(cols[2], line_no, "B")?,
                }),
                1 => devices.push(DeviceProfile {
                    name: cols[0].to_string(),
                    s: num(cols[1], line_no, "S")?,
                    p: num(cols[2], line_no, "P")?,
                }),
                _ => entries[k - 2].push((line_no, cols[0].to_string(), cols[1].to_string(), num(cols[2], line_no, "ns")?)),
            }
        }
        for (what, names) in [("field", fields.iter().map(|f| &f.name).collect::<Vec<_>>()), ("device", devices.iter().map(|d| &d.name).collect())] {
            for (i, a) in names.iter().enumerate() {
                if names[..i].contains(a) {
                    return Err(ProfileError::Invalid(format!("duplicate {what} `{a}`")));
                }
            }
        }
        let (n, m) = (fields.len(), devices.len());
        let mut mats = [vec![vec![None; m]; n], vec![vec![None; m]; n]];
        for (k, list) in entries.iter().enumerate() {
            for (line, f, d, v) in list {
                let i = fields
                    .iter()
                    .position(|x| &x.name == f)
                    .ok_or_else(|| bad(*line, format!("unknown field `{f}`")))?;
                let j = devices
                    .iter()
                    .position(|x| &x.name == d)
                    .ok_or_else(|| bad(*line, format!("unknown device `{d}`")))?;
                if mats[k][i][j].replace(*v).is_some() {
                    return Err(bad(*line, format!("duplicate entry for `{f}` on `{d}`")));
                }
            }
        }
        let [c, r] = mats;
        let mut cm = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                cm[i][j] = c[i][j].ok_or_else(|| ProfileError::MissingCost {
                    field: fields[i].name.clone(),
                    device: devices[j].name.clone(),
                })?;
            }
        }
        let rm = r.into_iter().map(|row| row.into_iter().map(|v| v.unwrap_or(0.0)).collect()).collect();
        let profile = Profile {
            fields,
            devices,
            c: cm,
            r: rm,
        };
        profile.validate()?;
        Ok(profile)
    }
}
