//! Synthetic microinverter firmware listing and the default attack templates.
//!
//! The listing imitates `dis2000` output for a C28x control application:
//! peripheral init, a scheduler, ADC/control ISRs, per-channel MPPT routines,
//! PWM update and serial comms. Hook sites carry `@isr_block`, `@mppt_entry`
//! and `@sensor_read` comment markers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mutate::{Anchor, AttackKind, InjectionTemplate, DOS_TOGGLE_SECONDS, ISR_RATE_HZ};

const BASE_SEED: u64 = 0x28035;
const START_ADDRESS: u64 = 0x3f4000;
const ISR_COUNT: usize = 64;

const VARS: &[&str] = &[
    "VpvSense",
    "IpvSense",
    "VgridSense",
    "IgridSense",
    "VbusSense",
    "DutyCmd",
    "IrefCmd",
    "PiErr",
    "PiInteg",
    "PiOut",
    "Gain",
    "Offset",
    "Scale",
    "Limit",
    "Theta",
    "SinVal",
    "CosVal",
    "Filt0",
    "Filt1",
    "Temp0",
    "Status",
    "Counter",
    "Timer",
    "Flags",
];
const REGS: &[&str] = &[
    "EPwm1Regs.TBPRD",
    "EPwm1Regs.CMPA",
    "EPwm2Regs.CMPA",
    "EPwm1Regs.AQCTLA",
    "AdcRegs.ADCSOC0CTL",
    "AdcRegs.ADCCTL1",
    "GpioCtrlRegs.GPAMUX1",
    "GpioCtrlRegs.GPADIR",
    "SysCtrlRegs.PCLKCR0",
    "PieCtrlRegs.PIEIER1",
    "SciaRegs.SCICTL1",
    "CpuTimer0Regs.TCR",
];
const ADC_RESULTS: &[&str] = &[
    "AdcResult.ADCRESULT0",
    "AdcResult.ADCRESULT1",
    "AdcResult.ADCRESULT2",
    "AdcResult.ADCRESULT3",
    "AdcResult.ADCRESULT4",
    "AdcResult.ADCRESULT5",
];
const COND: &[&str] = &["EQ", "NEQ", "GT", "GEQ", "LT", "LEQ"];

struct Emitter {
    rng: ChaCha8Rng,
    addr: u64,
    out: String,
    count: usize,
}

impl Emitter {
    fn new(seed: u64) -> Self {
        Emitter { rng: ChaCha8Rng::seed_from_u64(seed), addr: START_ADDRESS, out: String::new(), count: 0 }
    }

    fn raw(&mut self, line: &str) {
        self.out.push_str(line);
        self.out.push('\n');
    }

    fn label(&mut self, name: &str) {
        self.raw(&format!("{name}:"));
    }

    fn ins(&mut self, mnemonic: &str, operands: &str, comment: Option<&str>) {
        let opcode: u16 = self.rng.gen();
        let mut line = format!("{:07x} {:04x} {:<4} {}", self.addr, opcode, mnemonic, operands);
        if let Some(c) = comment {
            line.push_str(" ;");
            line.push_str(c);
        }
        self.raw(line.trim_end());
        self.addr += 1;
        self.count += 1;
    }

    fn i(&mut self, mnemonic: &str, operands: impl AsRef<str>) {
        self.ins(mnemonic, operands.as_ref(), None);
    }

    fn var(&mut self) -> &'static str {
        VARS.choose(&mut self.rng).unwrap()
    }

    fn reg(&mut self) -> &'static str {
        REGS.choose(&mut self.rng).unwrap()
    }

    fn cond(&mut self) -> &'static str {
        COND.choose(&mut self.rng).unwrap()
    }

    fn imm(&mut self) -> u16 {
        self.rng.gen()
    }

    fn page(&mut self) -> String {
        format!("#0x{:03x}", self.rng.gen_range(0x160..0x1e0))
    }

    fn offset(&mut self) -> i32 {
        self.rng.gen_range(2..24)
    }

    // --- idioms -------------------------------------------------------------

    fn load_store(&mut self) {
        let (p, a, b) = (self.page(), self.var(), self.var());
        self.i("MOVW", format!("DP,{p}"));
        self.i("MOV", format!("AL,@{a}"));
        self.i("MOVH", format!("@{b},ACC<<1"));
    }

    fn load_add_store(&mut self) {
        let (a, b, c) = (self.var(), self.var(), self.var());
        self.i("MOV", format!("AL,@{a}"));
        self.i("ADD", format!("AL,@{b}"));
        self.i("MOVH", format!("@{c},ACC<<1"));
    }

    fn q15_multiply(&mut self) {
        let (a, b, c) = (self.var(), self.var(), self.var());
        self.i("MOV", format!("T,@{a}"));
        self.i("MPY", format!("ACC,T,@{b}"));
        self.i("ADDL", format!("ACC,@{c}"));
        if self.rng.gen_bool(0.5) {
            self.i("ASR", "AL,#1");
        }
        self.i("MOVDL", format!("XT,@{c}"));
    }

    fn accumulate(&mut self) {
        let n = self.rng.gen_range(2..5);
        let a = self.var();
        self.i("MOVL", format!("ACC,@{a}"));
        for _ in 0..n {
            let b = self.var();
            let m = ["ADDL", "SUBL", "ADD", "SUB"][self.rng.gen_range(0..4)];
            self.i(m, format!("ACC,@{b}"));
        }
    }

    fn bit_config(&mut self) {
        let p = self.page();
        self.i("MOVW", format!("DP,{p}"));
        let n = self.rng.gen_range(1..4);
        for _ in 0..n {
            let (r, m) = (self.reg(), self.imm());
            let op = ["AND", "OR", "OR", "XOR"][self.rng.gen_range(0..4)];
            self.i(op, format!("@{r},#0x{m:04X}"));
        }
    }

    fn flag_test(&mut self) {
        let (f, bit, off, c) =
            (self.var(), self.rng.gen_range(0..16), self.offset(), ["TC", "NTC"][self.rng.gen_range(0..2)]);
        self.i("TBIT", format!("@{f},#{bit}"));
        self.i("SB", format!("{off},{c}"));
    }

    fn compare_branch(&mut self) {
        let (a, imm, off, c) = (self.var(), self.imm() & 0x7fff, self.offset(), self.cond());
        self.i("MOV", format!("AL,@{a}"));
        self.i("CMP", format!("AL,#{imm}"));
        self.i("SB", format!("{off},{c}"));
    }

    fn saturate(&mut self) {
        let (a, lim) = (self.var(), self.var());
        self.i("MOVL", format!("ACC,@{a}"));
        self.i("CMPL", format!("ACC,@{lim}"));
        self.i("SB", "3,LT");
        self.i("MOVL", format!("ACC,@{lim}"));
        self.i("MOVH", format!("@{a},ACC<<16"));
    }

    fn mask_shift(&mut self) {
        let a = self.var();
        let sh = self.rng.gen_range(1..8);
        self.i("MOV", format!("AL,@{a}"));
        let op = ["LSL", "LSR"][self.rng.gen_range(0..2)];
        self.i(op, format!("AL,#{sh}"));
        let m = self.imm();
        self.i("ANDB", format!("AL,#0x{:02X}", m & 0xff));
    }

    fn counter_step(&mut self) {
        let a = self.var();
        self.i("MOVW", "DP,#0x1c0");
        self.i("INC", format!("@{a}"));
        self.i("MOV", format!("AL,@{a}"));
        let lim = self.rng.gen_range(2..200);
        self.i("CMPB", format!("AL,#{lim}"));
        let off = self.offset();
        self.i("SB", format!("{off},LT"));
    }

    fn misc_other(&mut self) {
        let m = ["NOP", "EALLOW", "EDIS", "SETC", "CLRC", "ASP", "NASP"][self.rng.gen_range(0..7)];
        let ops = match m {
            "SETC" | "CLRC" => "SXM",
            _ => "",
        };
        self.i(m, ops);
    }

    fn call(&mut self, target: &str) {
        self.i("LCR", format!("#_{target}"));
    }

    fn sensor_read(&mut self, ch: usize) {
        let r = ADC_RESULTS[ch % ADC_RESULTS.len()];
        self.i("MOVW", "DP,#0x1c0");
        self.ins("MOV", &format!("AL,@{r}"), Some("@sensor_read"));
        let (s, o) = (self.var(), self.var());
        self.i("MOV", format!("T,@{s}"));
        self.i("MPYU", "ACC,T,@AL");
        self.i("SUBL", format!("ACC,@{o}"));
    }

    fn prologue(&mut self) {
        self.ins("PUSH", "AR1H:AR0H", Some("@isr_block"));
        self.i("PUSH", "XAR4");
        self.i("PUSH", "XAR5");
        self.i("ASP", "");
    }

    fn epilogue(&mut self, isr: bool) {
        self.i("NASP", "");
        self.i("POP", "XAR5");
        self.i("POP", "XAR4");
        self.i("POP", "AR1H:AR0H");
        self.i(if isr { "IRET" } else { "LRETR" }, "");
    }

    fn mixed(&mut self, weights: &[(fn(&mut Emitter), u32)], n: usize) {
        let total: u32 = weights.iter().map(|w| w.1).sum();
        for _ in 0..n {
            let mut pick = self.rng.gen_range(0..total);
            for (f, w) in weights {
                if pick < *w {
                    f(self);
                    break;
                }
                pick -= w;
            }
        }
    }
}

type Idiom = fn(&mut Emitter);

fn init_routine(e: &mut Emitter, name: &str) {
    e.label(&format!("_{name}"));
    e.i("EALLOW", "");
    let mix: &[(Idiom, u32)] =
        &[(Emitter::bit_config, 6), (Emitter::load_store, 3), (Emitter::mask_shift, 2), (Emitter::misc_other, 1)];
    let n = e.rng.gen_range(4..8);
    e.mixed(mix, n);
    e.i("EDIS", "");
    e.i("LRETR", "");
}

/// Sampling ISR: context save, one or two sensor channels, the per-channel
/// MPPT step call and the PIE acknowledge.
fn control_isr(e: &mut Emitter, name: &str, first_channel: usize, channels: usize, mppt: &str) {
    e.label(&format!("_{name}"));
    e.prologue();
    for ch in first_channel..first_channel + channels {
        e.sensor_read(ch);
        let mix: &[(Idiom, u32)] = &[
            (Emitter::q15_multiply, 4),
            (Emitter::accumulate, 3),
            (Emitter::saturate, 2),
            (Emitter::load_add_store, 2),
        ];
        let n = e.rng.gen_range(1..3);
        e.mixed(mix, n);
    }
    e.ins("LCR", &format!("#_{mppt}"), Some("@mppt_entry"));
    e.i("MOVW", "DP,#0x0ce");
    e.i("MOV", "@PieCtrlRegs.PIEACK,#0x0001");
    e.epilogue(true);
}

fn mppt_routine(e: &mut Emitter, name: &str) {
    e.label(&format!("_{name}"));
    e.prologue();
    let mix: &[(Idiom, u32)] = &[
        (Emitter::accumulate, 3),
        (Emitter::compare_branch, 3),
        (Emitter::q15_multiply, 2),
        (Emitter::saturate, 2),
        (Emitter::flag_test, 1),
    ];
    let n = e.rng.gen_range(5..8);
    e.mixed(mix, n);
    e.epilogue(false);
}

fn scheduler(e: &mut Emitter, tasks: &[String]) {
    e.label("_TaskScheduler");
    for round in 0..2 {
        e.counter_step();
        for (k, t) in tasks.iter().enumerate() {
            if (k + round) % 2 == 0 {
                e.flag_test();
                e.call(t);
            }
        }
    }
    e.i("LB", "#_TaskScheduler");
}

fn comms_routine(e: &mut Emitter, name: &str) {
    e.label(&format!("_{name}"));
    let mix: &[(Idiom, u32)] = &[
        (Emitter::load_store, 4),
        (Emitter::mask_shift, 3),
        (Emitter::flag_test, 2),
        (Emitter::counter_step, 1),
        (Emitter::misc_other, 1),
    ];
    let n = e.rng.gen_range(5..9);
    e.mixed(mix, n);
    e.i("LRETR", "");
}

fn pwm_update(e: &mut Emitter, name: &str) {
    e.label(&format!("_{name}"));
    e.prologue();
    let mix: &[(Idiom, u32)] =
        &[(Emitter::q15_multiply, 3), (Emitter::saturate, 2), (Emitter::bit_config, 2), (Emitter::load_add_store, 2)];
    let n = e.rng.gen_range(3..6);
    e.mixed(mix, n);
    e.epilogue(true);
}

/// The shipped synthetic base firmware (about 3000 instructions).
pub fn synthetic_base() -> String {
    let mut e = Emitter::new(BASE_SEED);
    e.raw("; TMS320F28035 solar microinverter control firmware (synthetic)");
    e.raw("        .sect \".text\"");

    let inits =
        ["InitSysCtrl", "InitGpio", "InitPieCtrl", "InitAdc", "InitEPwm", "InitSci", "InitCpuTimers", "InitFlash"];
    for name in inits {
        init_routine(&mut e, name);
    }

    let mppt: Vec<String> = (0..3).map(|k| format!("MPPT_PnO_Ch{k}")).collect();
    let tasks: Vec<String> = ["SciTask", "FaultTask", "LedTask", "ThermalTask"].iter().map(|s| s.to_string()).collect();
    scheduler(&mut e, &tasks);

    for k in 0..ISR_COUNT {
        let ch = k % mppt.len();
        control_isr(&mut e, &format!("AdcIsr{k}"), ch, 1 + k % 2, &mppt[ch]);
        if k % 2 == 1 {
            pwm_update(&mut e, &format!("PwmUpdate{}", k / 2));
        }
        let stride = ISR_COUNT / mppt.len();
        if k % stride == stride / 2 && k / stride < mppt.len() {
            let m = &mppt[k / stride];
            mppt_routine(&mut e, m);
        }
    }
    for t in &tasks {
        comms_routine(&mut e, t);
    }
    e.raw("        .end");
    e.out
}

fn lines(src: &[&str]) -> Vec<String> {
    src.iter().map(|s| s.to_string()).collect()
}

/// Toggle period for the inverter DoS in ISR ticks.
pub fn dos_period_ticks() -> u64 {
    DOS_TOGGLE_SECONDS * ISR_RATE_HZ
}

/// Default template for each attack kind.
pub fn default_template(kind: AttackKind) -> InjectionTemplate {
    match kind {
        // early return out of the MPPT routine while a kill flag is set
        AttackKind::MpptDos => InjectionTemplate {
            attack: kind,
            anchor: Anchor::MpptEntry,
            period_ticks: 0,
            payload: lines(&[
                "MOVW DP,#0x1c4",
                "TBIT @MpptKill,#0",
                "SB 9,NTC",
                "AND @MpptEnable,#0xFFFE",
                "XOR @IrefCmd,@IrefCmd",
                "OR @MpptStatus,#0x8000",
                "SB 4,UNC",
            ]),
        },
        // every 10 s flip a lock bit and force/clear the PWM trip zone
        AttackKind::InverterDos => InjectionTemplate {
            attack: kind,
            anchor: Anchor::IsrBlock,
            period_ticks: dos_period_ticks(),
            payload: lines(&[
                "MOVL ACC,@CpuTimer0Count",
                "SUBL ACC,@DosLastToggle",
                "CMPL ACC,#{period_ticks}",
                "SB 11,LT",
                "XOR @DosLock,#0x0001",
                "TBIT @DosLock,#0",
                "SB 4,NTC",
                "OR @EPwm1Regs.TZFRC,#0x0004",
                "OR @EPwm2Regs.TZFRC,#0x0004",
                "SB 3,UNC",
                "AND @EPwm1Regs.TZCLR,#0xFFFB",
                "AND @EPwm2Regs.TZCLR,#0xFFFB",
            ]),
        },
        // every few interrupts swap the sensed value for an entry of a bogus table
        AttackKind::InputArray => InjectionTemplate {
            attack: kind,
            anchor: Anchor::SensorRead,
            period_ticks: 4,
            payload: lines(&[
                "INC @ErrTick",
                "TBIT @ErrTick,#2",
                "SB 8,NTC",
                "MOV AL,@ErrIdx",
                "ADDB AL,#1",
                "ANDB AL,#0x0F",
                "XORB AL,#{rand}",
                "ADD AL,#{rand}",
                "B 2,UNC",
            ]),
        },
        // every few interrupts replace the sensed value with a sine-table sample
        AttackKind::InputSine => InjectionTemplate {
            attack: kind,
            anchor: Anchor::SensorRead,
            period_ticks: 4,
            payload: lines(&[
                "TBIT @SineGate,#1",
                "SB 9,NTC",
                "ADD AL,#{rand}",
                "ANDB AL,#0xFF",
                "LSL AL,#1",
                "ADD AL,@SineBase",
                "MPY ACC,T,@SineAmp",
                "ADD AL,@SineOffset",
                "B 2,UNC",
            ]),
        },
    }
}

pub fn default_templates() -> Vec<InjectionTemplate> {
    AttackKind::ALL.into_iter().map(default_template).collect()
}
