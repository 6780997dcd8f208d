//! The operator-expression mini-language.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr := term ("+" term)*
//! term := [float "*"] atom ["." atom]
//! atom := "Id" | "T" | "S" | "Tperp" | "Sperp"
//! ```
//!
//! `.` denotes composition, left of right: `Tperp.S` applies `S` first.
//! Compiling substitutes `T`, `S`, `Id`, `Tperp = Id - T`, `Sperp = Id - S`
//! and evaluates the linear combination as a dense matrix.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::varifold::Projector;

#[derive(Debug, Error, PartialEq)]
pub enum OperatorParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown atom {name:?} at byte {offset}")]
    UnknownAtom { offset: usize, name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Atom {
    Id,
    T,
    S,
    TPerp,
    SPerp,
}

impl Atom {
    fn name(self) -> &'static str {
        match self {
            Atom::Id => "Id",
            Atom::T => "T",
            Atom::S => "S",
            Atom::TPerp => "Tperp",
            Atom::SPerp => "Sperp",
        }
    }

    fn matrix(self, t: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
        let n = t.nrows();
        match self {
            Atom::Id => DMatrix::identity(n, n),
            Atom::T => t.clone(),
            Atom::S => s.clone(),
            Atom::TPerp => DMatrix::identity(n, n) - t,
            Atom::SPerp => DMatrix::identity(n, n) - s,
        }
    }
}

/// One term: `coeff * first` or `coeff * (first ∘ second)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub first: Atom,
    pub second: Option<Atom>,
}

/// A parsed operator expression: a sum of scaled (possibly composed) atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    pub terms: Vec<Term>,
}

impl OperatorSpec {
    pub fn parse(text: &str) -> Result<Self, OperatorParseError> {
        Parser::new(text).parse()
    }

    /// Substitutes the projectors and evaluates the expression.
    ///
    /// Panics if `t` and `s` have different ambient dimensions; such inputs
    /// are rejected earlier by the varifold constructors.
    pub fn compile(&self, t: &Projector, s: &Projector) -> DMatrix<f64> {
        assert_eq!(
            t.dim(),
            s.dim(),
            "projector dimension mismatch: {} vs {}",
            t.dim(),
            s.dim()
        );
        let tm = t.matrix();
        let sm = s.matrix();
        let n = tm.nrows();
        let mut out = DMatrix::zeros(n, n);
        for term in &self.terms {
            let mut m = term.first.matrix(tm, sm);
            if let Some(second) = term.second {
                m *= second.matrix(tm, sm);
            }
            out += m * term.coeff;
        }
        out
    }
}

impl FromStr for OperatorSpec {
    type Err = OperatorParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, term) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if term.coeff != 1.0 {
                write!(f, "{}*", term.coeff)?;
            }
            write!(f, "{}", term.first.name())?;
            if let Some(second) = term.second {
                write!(f, ".{}", second.name())?;
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn error(&self, message: impl Into<String>) -> OperatorParseError {
        OperatorParseError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn parse(mut self) -> Result<OperatorSpec, OperatorParseError> {
        let mut terms = vec![self.term()?];
        loop {
            self.skip_ws();
            match self.peek() {
                None => break,
                Some(b'+') => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(c) => {
                    return Err(self.error(format!("expected '+' or end, found {:?}", c as char)))
                }
            }
        }
        Ok(OperatorSpec { terms })
    }

    fn term(&mut self) -> Result<Term, OperatorParseError> {
        self.skip_ws();
        let coeff = match self.peek() {
            Some(c) if c == b'-' || c == b'+' || c.is_ascii_digit() => {
                let coeff = self.float()?;
                self.skip_ws();
                if self.peek() != Some(b'*') {
                    return Err(self.error("expected '*' after coefficient"));
                }
                self.pos += 1;
                coeff
            }
            _ => 1.0,
        };
        let first = self.atom()?;
        self.skip_ws();
        let second = if self.peek() == Some(b'.') {
            self.pos += 1;
            Some(self.atom()?)
        } else {
            None
        };
        Ok(Term {
            coeff,
            first,
            second,
        })
    }

    fn float(&mut self) -> Result<f64, OperatorParseError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        self.text[start..self.pos].parse().map_err(|_| {
            OperatorParseError::Syntax {
                offset: start,
                message: format!("invalid number {:?}", &self.text[start..self.pos]),
            }
        })
    }

    fn atom(&mut self) -> Result<Atom, OperatorParseError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        let name = &self.text[start..self.pos];
        match name {
            "Id" => Ok(Atom::Id),
            "T" => Ok(Atom::T),
            "S" => Ok(Atom::S),
            "Tperp" => Ok(Atom::TPerp),
            "Sperp" => Ok(Atom::SPerp),
            "" => Err(OperatorParseError::Syntax {
                offset: start,
                message: "expected atom".into(),
            }),
            _ => Err(OperatorParseError::UnknownAtom {
                offset: start,
                name: name.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::varifold::Projector;
    use nalgebra::{DMatrix, DVector};

    fn random_projector(rng: &mut SplitMix64, n: usize, d: usize) -> Projector {
        // Orthonormalize d random vectors (Gram-Schmidt).
        let mut basis: Vec<DVector<f64>> = Vec::new();
        while basis.len() < d {
            let mut v = rng.unit_vector(n);
            for b in &basis {
                let p = b.dot(&v);
                v -= b * p;
            }
            if v.norm() > 1e-6 {
                basis.push(v.normalize());
            }
        }
        Projector::from_orthonormal_basis(&basis, n)
    }

    #[test]
    fn parses_simple_terms() {
        let spec = OperatorSpec::parse("2*Id").unwrap();
        assert_eq!(
            spec.terms,
            vec![Term {
                coeff: 2.0,
                first: Atom::Id,
                second: None
            }]
        );

        let spec = OperatorSpec::parse("Tperp.S").unwrap();
        assert_eq!(
            spec.terms,
            vec![Term {
                coeff: 1.0,
                first: Atom::TPerp,
                second: Some(Atom::S)
            }]
        );

        let spec = OperatorSpec::parse("-2*Sperp + S").unwrap();
        assert_eq!(spec.terms.len(), 2);
        assert_eq!(spec.terms[0].coeff, -2.0);
        assert_eq!(spec.terms[0].first, Atom::SPerp);
        assert_eq!(spec.terms[1].first, Atom::S);
    }

    #[test]
    fn whitespace_insensitive() {
        let a = OperatorSpec::parse("-2*Tperp.Sperp+2*Id").unwrap();
        let b = OperatorSpec::parse("  -2 * Tperp . Sperp  +  2 * Id ").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_carry_byte_offsets() {
        match OperatorSpec::parse("2*Foo") {
            Err(OperatorParseError::UnknownAtom { offset, name }) => {
                assert_eq!(offset, 2);
                assert_eq!(name, "Foo");
            }
            other => panic!("unexpected {other:?}"),
        }
        match OperatorSpec::parse("S - T") {
            Err(OperatorParseError::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(OperatorSpec::parse("").is_err());
        assert!(OperatorSpec::parse("2*").is_err());
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "2*Id",
            "Tperp.S",
            "-2*Sperp + S",
            "S",
            "-2*Tperp.Sperp",
            "2*Sperp.Tperp",
            "S.T",
            "-1*Sperp.T",
            "0.5*T + 0.25*S.Tperp",
        ] {
            let spec = OperatorSpec::parse(text).unwrap();
            let printed = spec.to_string();
            let reparsed = OperatorSpec::parse(&printed).unwrap();
            assert_eq!(spec, reparsed, "round trip failed for {text:?}");
        }
    }

    #[test]
    fn compile_identity_and_collapse() {
        let mut rng = SplitMix64::new(11);
        let t = random_projector(&mut rng, 3, 1);
        let s = random_projector(&mut rng, 3, 1);

        let two_id = OperatorSpec::parse("2*Id").unwrap().compile(&t, &s);
        assert!((two_id - DMatrix::identity(3, 3) * 2.0).norm() < 1e-14);

        // (Id - T) T = 0 by idempotence.
        let z = OperatorSpec::parse("Tperp.S").unwrap().compile(&t, &t);
        assert!(z.norm() < 1e-12);
    }

    #[test]
    fn compile_diagonal_example() {
        let s = Projector::try_new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])), 1, 1e-12)
            .unwrap();
        let t = Projector::try_new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), 1, 1e-12)
            .unwrap();
        let m = OperatorSpec::parse("S").unwrap().compile(&t, &s);
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(1, 1)], 1.0);
    }

    #[test]
    fn compile_is_linear_in_the_spec() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..20 {
            let t = random_projector(&mut rng, 4, 2);
            let s = random_projector(&mut rng, 4, 2);
            let a = rng.range(-3.0, 3.0);
            let b = rng.range(-3.0, 3.0);
            let p1 = OperatorSpec::parse("Tperp.S").unwrap();
            let p2 = OperatorSpec::parse("Sperp").unwrap();
            let combined = OperatorSpec {
                terms: vec![
                    Term {
                        coeff: a,
                        first: Atom::TPerp,
                        second: Some(Atom::S),
                    },
                    Term {
                        coeff: b,
                        first: Atom::SPerp,
                        second: None,
                    },
                ],
            };
            let lhs = combined.compile(&t, &s);
            let rhs = p1.compile(&t, &s) * a + p2.compile(&t, &s) * b;
            assert!((lhs - rhs).norm() <= 1e-14 * (1.0 + a.abs() + b.abs()));
        }
    }

    #[test]
    fn projector_identities_after_compilation() {
        // 2Id = 2Tperp + 2T; -2Sperp = 2S - 2Id; Sperp.Tperp + S.Tperp = Tperp.
        let mut rng = SplitMix64::new(5150);
        for _ in 0..50 {
            let n = 2 + rng.below(4);
            let d = 1 + rng.below(n - 1);
            let t = random_projector(&mut rng, n, d);
            let s = random_projector(&mut rng, n, d);
            let c = |text: &str| OperatorSpec::parse(text).unwrap().compile(&t, &s);
            assert!((c("2*Id") - (c("2*Tperp") + c("2*T"))).norm() < 1e-14);
            assert!((c("-2*Sperp") - (c("2*S") - c("2*Id"))).norm() < 1e-14);
            assert!((c("Sperp.Tperp") + c("S.Tperp") - c("Tperp")).norm() < 1e-14);
        }
    }
}
