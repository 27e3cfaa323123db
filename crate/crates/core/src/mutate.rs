//! Attack-code injection into assembly listings.
//!
//! A template names an anchor (`isr_block`, `mppt_entry` or `sensor_read`) and a
//! payload of assembly lines. The anchor marks hook sites in the base listing,
//! either as a `name:` label line or as an `@name` token inside a line comment.
//! The payload is spliced right after every hook site and all following
//! instruction addresses are shifted so the listing stays monotone.
//!
//! Payload lines may use placeholders:
//!
//! * `{period_ticks}`: the template's toggle period in ISR ticks
//! * `{rand}`: a seeded 16-bit constant (`0x....`), fresh per use
//! * `{site}`: index of the hook site being patched

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asm::{parse_line, CategoryMap, InstructionCategory, LineKind};
use crate::error::{Error, Result};

/// ISR rate used to turn the toggle period in seconds into ticks.
pub const ISR_RATE_HZ: u64 = 60_000;
/// DoS toggle period: lock/unlock every 10 s.
pub const DOS_TOGGLE_SECONDS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    MpptDos,
    InverterDos,
    InputArray,
    InputSine,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] =
        [AttackKind::MpptDos, AttackKind::InverterDos, AttackKind::InputArray, AttackKind::InputSine];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::MpptDos => "mppt_dos",
            AttackKind::InverterDos => "inverter_dos",
            AttackKind::InputArray => "input_array",
            AttackKind::InputSine => "input_sine",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown attack kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    IsrBlock,
    MpptEntry,
    SensorRead,
}

impl Anchor {
    pub fn as_str(self) -> &'static str {
        match self {
            Anchor::IsrBlock => "isr_block",
            Anchor::MpptEntry => "mppt_entry",
            Anchor::SensorRead => "sensor_read",
        }
    }

    /// Does this listing line mark a hook site for the anchor?
    pub fn matches(self, line: &str) -> bool {
        let name = self.as_str();
        let trimmed = line.trim();
        if let Some(label) = trimmed.strip_suffix(':') {
            if label == name {
                return true;
            }
        }
        match line.find(';') {
            Some(i) => line[i + 1..]
                .split(|c: char| c.is_whitespace() || c == ',')
                .any(|tok| tok.strip_prefix('@') == Some(name)),
            None => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionTemplate {
    pub attack: AttackKind,
    pub anchor: Anchor,
    #[serde(default)]
    pub period_ticks: u64,
    pub payload: Vec<String>,
}

impl InjectionTemplate {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    /// Check the payload: non-empty and every line a mapped instruction.
    pub fn validate(&self, map: &CategoryMap) -> Result<()> {
        if self.payload.is_empty() {
            return Err(Error::PayloadUnparsable(format!("{}: empty payload", self.attack)));
        }
        for (i, raw) in self.payload.iter().enumerate() {
            let line = self.expand(raw, 0, &mut || 0);
            match parse_line(&format!("0000000 {line}"), map) {
                LineKind::Instruction(ins) if ins.category != InstructionCategory::Other => {}
                LineKind::Instruction(ins) => {
                    return Err(Error::PayloadUnparsable(format!(
                        "{}: payload line {} uses unmapped mnemonic `{}`",
                        self.attack,
                        i + 1,
                        ins.mnemonic
                    )))
                }
                _ => {
                    return Err(Error::PayloadUnparsable(format!(
                        "{}: payload line {} `{raw}` is not an instruction",
                        self.attack,
                        i + 1
                    )))
                }
            }
        }
        Ok(())
    }

    fn expand(&self, raw: &str, site: usize, rand16: &mut dyn FnMut() -> u16) -> String {
        let mut out = raw.replace("{period_ticks}", &self.period_ticks.to_string());
        out = out.replace("{site}", &site.to_string());
        while let Some(pos) = out.find("{rand}") {
            out.replace_range(pos..pos + 6, &format!("0x{:04X}", rand16()));
        }
        out
    }
}

fn parse_address(tok: &str) -> Option<u64> {
    u64::from_str_radix(tok, 16).ok()
}

/// Replace the leading address token of an instruction line, keeping its width.
fn readdress(line: &str, shift: u64) -> String {
    let lead = line.len() - line.trim_start().len();
    let body = &line[lead..];
    let tok_end = body.find(char::is_whitespace).unwrap_or(body.len());
    let tok = &body[..tok_end];
    match parse_address(tok) {
        Some(addr) => {
            let width = tok.len();
            let lower = tok.bytes().any(|b| b.is_ascii_lowercase());
            let new = if lower { format!("{:0width$x}", addr + shift) } else { format!("{:0width$X}", addr + shift) };
            format!("{}{}{}", &line[..lead], new, &body[tok_end..])
        }
        None => line.to_string(),
    }
}

/// Splice the template payload after every hook site of its anchor.
pub fn inject(base: &str, template: &InjectionTemplate, map: &CategoryMap, seed: u64) -> Result<String> {
    template.validate(map)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(base.len() * 2);
    let mut shift = 0u64;
    let mut last_addr: Option<u64> = None;
    let mut sites = 0usize;

    for line in base.lines() {
        let kind = parse_line(line, map);
        let is_instr = matches!(kind, LineKind::Instruction(_));
        let emitted = if is_instr && shift > 0 { readdress(line, shift) } else { line.to_string() };
        if let LineKind::Instruction(ins) = &kind {
            last_addr = parse_address(&ins.address).map(|a| a + shift);
        }
        out.push_str(&emitted);
        out.push('\n');

        if template.anchor.matches(line) {
            let width = match &kind {
                LineKind::Instruction(ins) => ins.address.len(),
                _ => 7,
            };
            let mut addr = last_addr.unwrap_or(0);
            for raw in &template.payload {
                addr += 1;
                let text = template.expand(raw, sites, &mut || rng.gen());
                out.push_str(&format!("{addr:0width$x} {text} ;injected {}\n", template.attack));
                shift += 1;
            }
            last_addr = Some(addr);
            sites += 1;
        }
    }
    if sites == 0 {
        return Err(Error::AnchorNotFound(template.anchor.as_str().to_string()));
    }
    Ok(out)
}

/// One generated firmware image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirmwareImage {
    pub id: String,
    pub attack: Option<AttackKind>,
    pub listing: String,
}

/// Base listing plus one mutant per template, in template order.
pub fn build_corpus(
    base: &str,
    templates: &[InjectionTemplate],
    map: &CategoryMap,
    seed: u64,
) -> Result<Vec<FirmwareImage>> {
    for t in templates {
        t.validate(map)?;
    }
    let mut images = vec![FirmwareImage { id: "base".into(), attack: None, listing: base.to_string() }];
    for (i, t) in templates.iter().enumerate() {
        let listing = inject(base, t, map, seed.wrapping_add(i as u64))?;
        images.push(FirmwareImage { id: t.attack.as_str().to_string(), attack: Some(t.attack), listing });
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_listing, ParseMode};

    const BASE: &str = "\
_Isr:
0003f00 8f00 MOV AL,@AdcResult0 ;@sensor_read
0003f01 dc18 ADD AL,@Offset
0003f02 d918 B 404,NEQ ;@isr_block
";

    fn template(anchor: Anchor, payload: &[&str]) -> InjectionTemplate {
        InjectionTemplate {
            attack: AttackKind::InputSine,
            anchor,
            period_ticks: 600_000,
            payload: payload.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn splices_after_anchor_and_shifts_addresses() {
        let map = CategoryMap::c28x_default();
        let t = template(Anchor::SensorRead, &["ANDB AL,#0xFF", "ADD AL,#{rand}"]);
        let out = inject(BASE, &t, &map, 7).unwrap();
        let lines: Vec<_> = out.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("0003f01 ANDB AL,#0xFF"));
        assert!(lines[3].starts_with("0003f02 ADD AL,#0x"));
        assert!(lines[4].starts_with("0003f03 dc18 ADD"));
        assert!(lines[5].starts_with("0003f04 d918 B"));
        let parsed = parse_listing(&out, &map, ParseMode::Strict).unwrap();
        assert_eq!(parsed.instructions.len(), 5);
    }

    #[test]
    fn label_anchor() {
        let map = CategoryMap::c28x_default();
        let base = "isr_block:\n0000010 8f00 MOV AL,@X\n";
        let out = inject(base, &template(Anchor::IsrBlock, &["TBIT @Flag,#0"]), &map, 1).unwrap();
        let parsed = parse_listing(&out, &map, ParseMode::Strict).unwrap();
        assert_eq!(parsed.instructions[0].mnemonic, "TBIT");
        assert_eq!(parsed.instructions[1].address, "0000011");
    }

    #[test]
    fn missing_anchor() {
        let map = CategoryMap::c28x_default();
        let err = inject(BASE, &template(Anchor::MpptEntry, &["NOT AL"]), &map, 1).unwrap_err();
        assert!(matches!(err, Error::AnchorNotFound(a) if a == "mppt_entry"));
    }

    #[test]
    fn bad_payloads() {
        let map = CategoryMap::c28x_default();
        let empty = template(Anchor::SensorRead, &[]);
        assert!(matches!(inject(BASE, &empty, &map, 1), Err(Error::PayloadUnparsable(_))));
        let unmapped = template(Anchor::SensorRead, &["NOP"]);
        assert!(matches!(unmapped.validate(&map), Err(Error::PayloadUnparsable(_))));
        let junk = template(Anchor::SensorRead, &["_label:"]);
        assert!(matches!(junk.validate(&map), Err(Error::PayloadUnparsable(_))));
    }

    #[test]
    fn seeded_placeholders_are_deterministic() {
        let map = CategoryMap::c28x_default();
        let t = template(Anchor::SensorRead, &["MOV AL,#{rand}", "CMPL ACC,#{period_ticks}"]);
        let a = inject(BASE, &t, &map, 3).unwrap();
        assert_eq!(a, inject(BASE, &t, &map, 3).unwrap());
        assert_ne!(a, inject(BASE, &t, &map, 4).unwrap());
        assert!(a.contains("CMPL ACC,#600000"));
    }

    #[test]
    fn anchor_matching() {
        assert!(Anchor::SensorRead.matches("0001 MOV AL,@X ;@sensor_read"));
        assert!(Anchor::SensorRead.matches("0001 MOV AL,@X ; read ADC @sensor_read, ch0"));
        assert!(!Anchor::SensorRead.matches("0001 MOV AL,@sensor_read"));
        assert!(Anchor::MpptEntry.matches("  mppt_entry:"));
        assert!(!Anchor::MpptEntry.matches("_mppt_entry_x:"));
    }

    #[test]
    fn template_json() {
        let t = template(Anchor::IsrBlock, &["MOV AL,@X"]);
        let json = t.to_json();
        assert!(json.contains("\"attack\": \"input_sine\""));
        assert!(json.contains("\"anchor\": \"isr_block\""));
        assert_eq!(InjectionTemplate::from_json(&json).unwrap(), t);
    }
}
