#![allow(dead_code)]

use nepgpt::model::GptConfig;
use nepgpt::shards::{DatasetSplit, SplitRole};
use nepgpt::trainer::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tiny model, small batches, short schedule.
pub fn tiny_run(vocab: usize, micro: usize, accum: usize, steps: u64) -> RunConfig {
    let mut c = RunConfig {
        model: GptConfig::tiny(vocab),
        ..RunConfig::default()
    };
    c.train.micro_batch = micro;
    c.train.grad_accum = accum;
    c.train.seed = 7;
    c.train.log_every = 1_000;
    c.train.checkpoint_every = 0;
    c.train.val_batches = 2;
    c.schedule.warmup_steps = 2;
    c.schedule.total_steps = steps;
    c
}

pub fn random_split(role: SplitRole, n: usize, vocab: usize, seed: u64) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = (0..n).map(|_| rng.random_range(0..vocab as u16)).collect();
    DatasetSplit::from_tokens(role, tokens, vocab)
}

/// Everyday Nepali sentences used to build small repetitive corpora.
pub const SENTENCES: [&str; 40] = [
    "म हरेक बिहान चिया पिउँछु ।",
    "हाम्रो गाउँमा ठूलो खोला बग्छ ।",
    "आमाले भान्सामा मिठो खाना पकाउनुभयो ।",
    "बालबालिकाहरू विद्यालयमा पढ्न जान्छन् ।",
    "काठमाडौं नेपालको राजधानी हो ।",
    "हिमालको दृश्य निकै सुन्दर देखिन्छ ।",
    "किसानहरू खेतमा धान रोप्दै छन् ।",
    "मेरो भाइलाई फुटबल खेल्न मन पर्छ ।",
    "आज आकाशमा बादल लागेको छ ।",
    "बजारमा ताजा तरकारी पाइन्छ ।",
    "शिक्षकले कक्षामा नयाँ पाठ पढाउनुभयो ।",
    "हामी दसैंमा घर फर्कन्छौं ।",
    "पुस्तकालयमा धेरै पुराना किताब छन् ।",
    "बुबाले बगैंचामा फूल रोप्नुभयो ।",
    "पहाडको बाटो अलि साँघुरो छ ।",
    "दिदीले मलाई एउटा चिठी लेखिन् ।",
    "वर्षामा खेतबारी हरियो हुन्छ ।",
    "हजुरआमा पुराना कथा सुनाउनुहुन्छ ।",
    "गाडी बिस्तारै उकालो चढ्यो ।",
    "साथीहरूसँग हामी पिकनिक गयौं ।",
    "नदी किनारमा बच्चाहरू खेल्दै थिए ।",
    "डाक्टरले बिरामीलाई औषधि दिनुभयो ।",
    "मन्दिरमा बिहानै घण्टी बज्छ ।",
    "जाडोमा हामी आगो ताप्छौं ।",
    "सडकमा धेरै मानिसहरू हिँडिरहेका छन् ।",
    "मेरो कोठाको झ्यालबाट हिमाल देखिन्छ ।",
    "भाइले परीक्षामा राम्रो अंक ल्यायो ।",
    "हाम्रो देशमा धेरै भाषा बोलिन्छन् ।",
    "गाईले गोठमा घाँस खाँदै छ ।",
    "बिहानको हावा चिसो र सफा हुन्छ ।",
    "आमा बजारबाट फलफूल किनेर आउनुभयो ।",
    "विद्यार्थीहरूले मैदानमा खेलकुद गरे ।",
    "तिहारमा घरघरमा बत्ती बालिन्छ ।",
    "पसलेले सस्तो मूल्यमा सामान बेच्यो ।",
    "हामीले रातभरि गीत गायौं ।",
    "पोखराको ताल धेरै शान्त छ ।",
    "कुकुरले ढोकामा बसेर कुर्दै थियो ।",
    "बहिनीले नयाँ कपडा लगाइन् ।",
    "चराहरू रूखमा बसेर गाउँछन् ।",
    "हामी भोलि पदयात्रामा जाँदैछौं ।",
];

/// About `target_bytes` of UTF-8 text: the sentences above, reshuffled on
/// every pass.
pub fn repetitive_corpus(target_bytes: usize, seed: u64) -> Vec<String> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut bytes = 0;
    while bytes < target_bytes {
        let mut order: Vec<&str> = SENTENCES.to_vec();
        order.shuffle(&mut rng);
        for s in order {
            bytes += s.len() + 1;
            out.push(s.to_string());
        }
    }
    out
}
