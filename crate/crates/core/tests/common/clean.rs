/// Input and expected output for each documented cleaning rule.
pub const FIXTURES: &[(&str, &str)] = &[
    ("それは...", "それは…"),
    ("体温は37°Cです。", "体温は37℃です。"),
    ("体温は37℃です。", "体温は37℃です。"),
    ("血圧 が 高い", "血圧▁が▁高い"),
    ("血圧が高い．", "血圧が高い。"),
    ("頭痛，発熱", "頭痛、発熱"),
    ("ＡＢＣ１２３", "ABC123"),
    ("本当！？", "本当!?"),
    ("ｶﾞｰｾﾞ", "ガーゼ"),
    ("a  \t b", "a▁b"),
    ("行1\r\n行2", "行1\n行2"),
];

pub const FUZZ_ALPHABET: &str = "あいう血圧アイウｱｲｳａｂＡ１２abc0123.．,，、。!！?？…°C℃~～ー―-‐【】「」()（）@#:/ \t\n\r♥☆😀<>|_";
