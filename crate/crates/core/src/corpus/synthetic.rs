//! Template-based synthetic corpora for tests, demos and smoke runs.
//!
//! Texts are short Chinese comments assembled from per-topic nouns and a few
//! ironic or plain templates, so the character vocabulary stays small and the
//! bundled replacement lexicon covers most content words.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::corpus::{CommentRecord, Hierarchy, Label, Topic, UserBehavior};
use crate::rng;

const NOUNS: [&[&str]; 5] = [
    &["咖啡", "外卖", "天气", "房子", "工作", "早餐", "快递", "手机"],
    &["政策", "会议", "官员", "新闻", "经济", "改革", "报告", "数据"],
    &["电影", "演员", "节目", "歌曲", "综艺", "明星", "剧情", "票"],
    &["男朋友", "女朋友", "婚礼", "父母", "朋友", "同事", "礼物", "约会"],
    &["事故", "地铁", "医院", "警察", "消息", "通知", "排队", "航班"],
];

const ADJS: [&str; 8] = ["精彩", "专业", "靠谱", "贴心", "厉害", "完美", "高效", "便宜"];
const IRONY: [&str; 7] = [
    "两个小时感觉过了五个小时",
    "等了三个小时才到",
    "我都感动哭了",
    "下次还敢",
    "不愧是你",
    "真是长见识了",
    "谁用谁知道",
];
const PLAIN: [&str; 6] = [
    "值得推荐",
    "大家可以试试",
    "希望越来越好",
    "支持一下",
    "心情不错",
    "下次再来",
];

fn sarcastic_text<R: Rng>(noun: &str, rng: &mut R) -> String {
    let adj = ADJS.choose(rng).expect("non-empty");
    let tail = IRONY.choose(rng).expect("non-empty");
    match rng.random_range(0..4) {
        0 => format!("这{noun}真是太{adj}了，{tail}"),
        1 => format!("{noun}可真{adj}啊，{tail}"),
        2 => format!("你是真的懂{noun}，{tail}"),
        _ => format!("{noun}这么{adj}，我服了，{tail}"),
    }
}

fn plain_text<R: Rng>(noun: &str, rng: &mut R) -> String {
    let adj = ADJS.choose(rng).expect("non-empty");
    let tail = PLAIN.choose(rng).expect("non-empty");
    match rng.random_range(0..3) {
        0 => format!("今天的{noun}很{adj}，{tail}"),
        1 => format!("{noun}还可以，{tail}"),
        _ => format!("觉得这个{noun}挺{adj}的，{tail}"),
    }
}

fn topic_distribution<R: Rng>(main: Topic, rng: &mut R) -> [f64; 5] {
    let mut w = [0.0; 5];
    for (i, x) in w.iter_mut().enumerate() {
        *x = rng.random_range(0.05..1.0) + if i == main.index() { 2.0 } else { 0.0 };
    }
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}

fn behavior<R: Rng>(sarcasm_rate: f64, topic: Topic, hierarchy: Hierarchy, rng: &mut R) -> UserBehavior {
    let count: f64 = LogNormal::new(4.5, 1.0).expect("valid").sample(rng);
    let count = count.round() as u64;
    let freq: f64 = LogNormal::new(0.5, 0.8).expect("valid").sample(rng);
    let base_reply = if hierarchy == Hierarchy::Nested { 0.6 } else { 0.3 };
    UserBehavior {
        comment_count: count,
        topic_distribution: topic_distribution(topic, rng),
        sarcasm_rate,
        comment_frequency: freq,
        reply_ratio: (base_reply + rng.random_range(-0.25..0.25f64)).clamp(0.0, 1.0),
    }
}

/// A balanced seed corpus in which text, behavior and label are correlated
/// the way collected data would be: sarcastic records use ironic templates and
/// come from users with higher sarcasm rates (with overlap).
pub fn seed_corpus(n: usize, seed: u64) -> Vec<CommentRecord> {
    let mut rng = rng::named_rng(seed, "synthetic.seed_corpus");
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Sarcastic } else { Label::NonSarcastic };
            let topic = Topic::ALL[rng.random_range(0..5)];
            let hierarchy = Hierarchy::ALL[rng.random_range(0..2)];
            let noun = NOUNS[topic.index()].choose(&mut rng).expect("non-empty");
            let text = match label {
                Label::Sarcastic => sarcastic_text(noun, &mut rng),
                _ => plain_text(noun, &mut rng),
            };
            let rate = match label {
                Label::Sarcastic => rng.random_range(0.35..0.95),
                _ => rng.random_range(0.02..0.55),
            };
            let mut r = CommentRecord::new(format!("seed-{i:05}"), text, label, topic, hierarchy)
                .with_behavior(behavior(rate, topic, hierarchy, &mut rng));
            if hierarchy == Hierarchy::Nested && rng.random_bool(0.5) {
                let parent = NOUNS[topic.index()].choose(&mut rng).expect("non-empty");
                r.context = Some(format!("大家觉得{parent}怎么样"));
            }
            r
        })
        .collect()
}

/// Balanced records whose label is decided by the sarcasm rate alone:
/// sarcastic iff `sarcasm_rate > 0.5`, with rates kept at least `margin` away
/// from 0.5. Text, topic, hierarchy and the other behavior features are drawn
/// independently of the label.
pub fn separable_corpus(n: usize, margin: f64, seed: u64) -> Vec<CommentRecord> {
    assert!((0.0..0.5).contains(&margin), "margin must lie in [0, 0.5)");
    let mut rng = rng::named_rng(seed, "synthetic.separable");
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Sarcastic } else { Label::NonSarcastic };
            let topic = Topic::ALL[rng.random_range(0..5)];
            let hierarchy = Hierarchy::ALL[rng.random_range(0..2)];
            let noun = NOUNS[topic.index()].choose(&mut rng).expect("non-empty");
            let text = if rng.random_bool(0.5) {
                sarcastic_text(noun, &mut rng)
            } else {
                plain_text(noun, &mut rng)
            };
            let rate = match label {
                Label::Sarcastic => rng.random_range(0.5 + margin..=1.0),
                _ => rng.random_range(0.0..=0.5 - margin),
            };
            CommentRecord::new(format!("sep-{i:05}"), text, label, topic, hierarchy)
                .with_behavior(behavior(rate, topic, hierarchy, &mut rng))
        })
        .collect()
}
