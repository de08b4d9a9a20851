//! Round-trip and totality checks for the listing front end: canonical
//! rendering re-parses to the same program, and every listing embedded in the
//! source material parses.

use wcet_core::listing::{parse_listing, Program};

const FIBO: &str = include_str!("../fixtures/fibo.arm");
const FIBO0: &str = include_str!("../fixtures/fibo0.arm");
const LD_FOLLOW_ST: &str = include_str!("../fixtures/ld_follow_st.arm");

/// The optimized Fibonacci program exactly as printed: bare decimal
/// addresses, no colons, no machine-code column, a block comment on the
/// label line.
const FIBO_VERBATIM: &str = "\
0 <main>: /* starts at address 0;
0   mov    r1,#30
4   mov    r2,#2
8   add    r1,r1,#1
12  add    r2,r2,#1
16  mov    r0,#0
20  mov    r3,#1
24  cmp    r2,r1
28  add    r0,r0,r3
32  bxeq   lr
36  add    r2,r2,#1
40  add    r2,r2,#1
44  add    r3,r3,r0
48  cmp    r2,r1
52  add    r0,r0,r3
56  bne    24
60  bx     lr
";

/// Operand-form zoo for the canonical-text round trip.
const OPERAND_FORMS: &str = "00000000 <main>:
0: mov r1,#30
4: mvns r2,r1 lsr #3
8: add r3,r1,r2 lsl #2
12: subs r4,r3,#-5
16: rsb r5,r4,#0
20: and r6,r5,r1
24: orr r7,r6,#255
28: eor r8,r7,r1 asr #1
32: cmp r8,r1
36: cmn r8,#1
40: tst r8,#3
44: mul r9,r1,r2
48: mla r10,r1,r2,r9
52: smull r11,r12,r1,r2
56: ldr r0,[sp,#4]
60: str r0,[sp,#-8]
64: ldr r1,[r2, r3 lsl #2]
68: ldm sp,{r0,r1}
72: stm sp,{r2,r3}
76: stmdb sp!,{r4,r5}
80: ldmia sp!,{r4,r5}
84: push {lr}
88: pop {lr}
92: beq 0
96: blne 0
100: bx lr
";

fn semantic_view(p: &Program) -> Vec<(u32, String, bool)> {
    p.instructions
        .values()
        .map(|i| (i.address, format!("{:?}{:?}{:?}", i.cond, i.sets_flags, i.body), i.sets_flags))
        .collect()
}

fn assert_roundtrip(text: &str) {
    let first = parse_listing(text).unwrap();
    let rendered = first.render();
    let second = parse_listing(&rendered).unwrap_or_else(|e| panic!("re-parse failed: {e}\n{rendered}"));
    assert_eq!(semantic_view(&first), semantic_view(&second), "{rendered}");
    assert_eq!(first.symbols, second.symbols);
    assert_eq!(first.entry, second.entry);
    // Rendering is a fixpoint from the second parse on.
    assert_eq!(rendered, second.render());
}

#[test]
fn roundtrip_fixture_listings() {
    assert_roundtrip(FIBO);
    assert_roundtrip(FIBO0);
    assert_roundtrip(LD_FOLLOW_ST);
    assert_roundtrip(OPERAND_FORMS);
}

#[test]
fn parses_the_verbatim_printed_fibo() {
    let verbatim = parse_listing(FIBO_VERBATIM).unwrap();
    let canonical = parse_listing(FIBO).unwrap();
    assert_eq!(semantic_view(&verbatim), semantic_view(&canonical));
}

#[test]
fn parses_every_embedded_listing() {
    for (name, text) in [
        ("fibo", FIBO),
        ("fibo-verbatim", FIBO_VERBATIM),
        ("fibo0", FIBO0),
        ("ld_follow_st", LD_FOLLOW_ST),
        ("operand-forms", OPERAND_FORMS),
    ] {
        let p = parse_listing(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!p.is_empty(), "{name}");
    }
}

#[test]
fn addresses_are_unique_and_increasing() {
    let p = parse_listing(FIBO0).unwrap();
    let addrs: Vec<u32> = p.instructions.keys().copied().collect();
    let mut sorted = addrs.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(addrs, sorted);
    assert!(p.instructions.contains_key(&p.entry));
}
