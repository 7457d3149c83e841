//! The `GT1` plain-text design format.
//!
//! ```text
//! GT1 <n> <m> [sc <ell> <s> <f0_size>]
//! t <test_index> <member indices...>
//! ```
//!
//! Indices are 0-based; a test line without members denotes an empty test
//! and tests without a line are empty as well. With the `sc` header the
//! compartments follow the equal-split convention of [`ScLayout`].

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::instance::{Design, ScLayout};

pub fn write<W: Write>(design: &Design, mut out: W) -> Result<()> {
    write!(out, "GT1 {} {}", design.n(), design.m())?;
    if let Some(l) = design.layout() {
        write!(out, " sc {} {} {}", l.ell(), l.s(), l.f0_size())?;
    }
    writeln!(out)?;
    let mut line = String::new();
    for a in 0..design.m() {
        line.clear();
        line.push_str("t ");
        line.push_str(&a.to_string());
        for &x in design.members(a) {
            line.push(' ');
            line.push_str(&x.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn to_string(design: &Design) -> String {
    let mut buf = Vec::new();
    write(design, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("GT1 output is ASCII")
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what}: {tok:?}"),
    })
}

pub fn read<R: BufRead>(input: R) -> Result<Design> {
    let mut lines = input.lines().enumerate();
    let (n, m, sc) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                msg: "empty input".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        if tok.next() != Some("GT1") {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected GT1 header".into(),
            });
        }
        let n: usize = field(tok.next(), i + 1, "n")?;
        let m: usize = field(tok.next(), i + 1, "m")?;
        let sc = match tok.next() {
            None => None,
            Some("sc") => {
                let ell: usize = field(tok.next(), i + 1, "ell")?;
                let s: usize = field(tok.next(), i + 1, "s")?;
                let f0: usize = field(tok.next(), i + 1, "f0_size")?;
                Some((ell, s, f0))
            }
            Some(other) => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("unexpected header token {other:?}"),
                })
            }
        };
        if tok.next().is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "trailing header tokens".into(),
            });
        }
        break (n, m, sc);
    };

    let mut tests: Vec<Option<Vec<usize>>> = vec![None; m];
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        if tok.next() != Some("t") {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected a test line".into(),
            });
        }
        let a: usize = field(tok.next(), i + 1, "test index")?;
        if a >= m {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("test index {a} >= m={m}"),
            });
        }
        if tests[a].is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("test {a} listed twice"),
            });
        }
        let members = tok
            .map(|t| {
                let x: usize = field(Some(t), i + 1, "individual index")?;
                if x >= n {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("individual {x} >= n={n}"),
                    });
                }
                Ok(x)
            })
            .collect::<Result<Vec<_>>>()?;
        tests[a] = Some(members);
    }
    let design = Design::from_tests(n, tests.into_iter().map(Option::unwrap_or_default).collect())?;
    match sc {
        Some((ell, s, f0)) => design.with_layout(ScLayout::new(n, m, ell, s, f0)?),
        None => Ok(design),
    }
}

pub fn from_str(s: &str) -> Result<Design> {
    read(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_design() {
        let d = from_str("GT1 4 3\nt 0 0 1\nt 2 3 2\n").unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.members(0), &[0, 1]);
        assert_eq!(d.members(1), &[] as &[u32]);
        assert_eq!(d.members(2), &[2, 3]);
        assert!(d.layout().is_none());
    }

    #[test]
    fn sc_header_round_trips() {
        let d = from_str("GT1 4 5 sc 2 1 1\nt 0 0 1\nt 1 0\nt 2 1\nt 3 2\nt 4 3\n").unwrap();
        let l = d.layout().unwrap();
        assert_eq!((l.ell(), l.s(), l.f0_size(), l.ring_size()), (2, 1, 1, 2));
        assert_eq!(from_str(&to_string(&d)).unwrap(), d);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(from_str("").is_err());
        assert!(from_str("GT2 1 1\n").is_err());
        assert!(from_str("GT1 2 1\nt 0 2\n").is_err());
        assert!(from_str("GT1 2 1\nt 1 0\n").is_err());
        assert!(from_str("GT1 2 1\nt 0 0\nt 0 1\n").is_err());
        assert!(from_str("GT1 2 3 sc 2 1 0\n").is_err());
    }
}
