//! Checkpoint round trip and corrupted-container cases.

use dmae::data::{make_synthetic, Dataset, SyntheticSpec};
use dmae::error::DmaeError;
use dmae::model::DmaeModel;
use dmae::nn::Module;
use dmae::train::{decode_checkpoint, encode_checkpoint, prepare, CheckpointMeta, Head, HeadSpec, Pooling, Task, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Byte offset of the metadata length: magic, version, 7 u32 and 4 f64
/// header fields.
pub const META_LEN_OFFSET: usize = 8 + 4 + 7 * 4 + 4 * 8;

pub fn dataset() -> Dataset {
    make_synthetic(&SyntheticSpec { n: 3, len: 16, count: 20, classes: 3, horizon: 3, ..Default::default() }).unwrap()
}

/// A random model with a classification head, and its container bytes.
pub fn sample(seed: u64) -> (DmaeModel<f32>, Head, CheckpointMeta, Vec<u8>) {
    let train = TrainConfig { hidden: 8, kernel_sizes: [2, 3, 5], num_kernels: 3, seed, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DmaeModel::<f32>::new(train.model_config(3, 16), &mut rng).unwrap();
    let task = Task::Classify { classes: 3 };
    let head = Head::new(task, Pooling::Mean, 8, &mut rng);
    let meta = CheckpointMeta {
        model: model.config().clone(),
        train: train.clone(),
        normalizer: prepare(&dataset(), seed, None).unwrap().normalizer,
        head: Some(HeadSpec { task, pooling: Pooling::Mean }),
        warm_up: false,
    };
    let bytes = encode_checkpoint(&model, Some(&head), &meta);
    (model, head, meta, bytes)
}

fn bits<M: Module<f32>>(m: &M) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    m.params()
        .iter()
        .map(|p| (p.id().to_string(), p.value.shape().to_vec(), p.value.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

/// Decoding reproduces every parameter (buffers included), the header
/// and the metadata exactly, and re-encoding gives the same bytes.
pub fn round_trip(seed: u64) -> Result<(), String> {
    let (model, head, meta, bytes) = sample(seed);
    let ck = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    if bits(&ck.model) != bits(&model) {
        return Err("model parameters differ after round trip".into());
    }
    let loaded_head = ck.head.as_ref().ok_or("head missing")?;
    if bits(loaded_head) != bits(&head) {
        return Err("head parameters differ after round trip".into());
    }
    if ck.meta != meta {
        return Err("metadata differs after round trip".into());
    }
    if ck.header.n != 3 || ck.header.len != 16 || ck.header.num_kernels != 3 || ck.header.kernel_sizes != [2, 3, 5] {
        return Err(format!("header fields altered: {:?}", ck.header));
    }
    if encode_checkpoint(&ck.model, ck.head.as_ref(), &ck.meta) != bytes {
        return Err("re-encoding changed the bytes".into());
    }
    Ok(())
}

/// `(description, corrupted bytes, expected error code)`.
pub fn corruptions(bytes: &[u8]) -> Vec<(&'static str, Vec<u8>, &'static str)> {
    let mut out = Vec::new();
    let mut b = bytes.to_vec();
    b[0] ^= 0xff;
    out.push(("corrupted magic", b, "E_FORMAT_MAGIC"));
    out.push(("empty file", Vec::new(), "E_FORMAT_MAGIC"));
    let mut b = bytes.to_vec();
    b[8..12].copy_from_slice(&99u32.to_le_bytes());
    out.push(("unknown version", b, "E_FORMAT_VERSION"));
    out.push(("truncated header", bytes[..20].to_vec(), "E_FORMAT_TRUNCATED"));
    out.push(("truncated parameters", bytes[..bytes.len() - 1].to_vec(), "E_FORMAT_TRUNCATED"));
    out.push(("truncated halfway", bytes[..bytes.len() / 2].to_vec(), "E_FORMAT_TRUNCATED"));
    let mut b = bytes.to_vec();
    b[12..16].copy_from_slice(&4u32.to_le_bytes());
    out.push(("header n disagrees with metadata", b, "E_FORMAT_INCONSISTENT"));
    let json_len = u32::from_le_bytes(bytes[META_LEN_OFFSET..META_LEN_OFFSET + 4].try_into().unwrap()) as usize;
    let count_at = META_LEN_OFFSET + 4 + json_len;
    let count = u32::from_le_bytes(bytes[count_at..count_at + 4].try_into().unwrap());
    let mut b = bytes.to_vec();
    b[count_at..count_at + 4].copy_from_slice(&(count - 1).to_le_bytes());
    out.push(("parameter count mismatch", b, "E_FORMAT_INCONSISTENT"));
    let mut b = bytes.to_vec();
    b[META_LEN_OFFSET + 5] = b'#';
    out.push(("unparseable metadata", b, "E_FORMAT_INCONSISTENT"));
    let mut b = bytes.to_vec();
    b.push(0);
    out.push(("trailing bytes", b, "E_FORMAT_INCONSISTENT"));
    out
}

/// Every corruption is rejected with its own code (exit status 3).
pub fn corrupted_containers() -> Result<(), String> {
    let (_, _, _, bytes) = sample(0);
    for (what, b, code) in corruptions(&bytes) {
        match decode_checkpoint(&b) {
            Ok(_) => return Err(format!("{what}: accepted")),
            Err(e) if e.code() != code || e.exit_code() != 3 => {
                return Err(format!("{what}: got {} ({e}), expected {code}", e.code()))
            }
            Err(_) => {}
        }
    }
    Ok(())
}

/// Fine-tuning against a dataset of another shape is a configuration error.
pub fn shape_guard() -> Result<(), String> {
    let (model, _, meta, _) = sample(0);
    let other = make_synthetic(&SyntheticSpec { n: 3, len: 12, count: 20, classes: 3, horizon: 3, ..Default::default() }).unwrap();
    match dmae::train::finetune(model, &meta.normalizer, &other, Task::Classify { classes: 3 }, &meta.train) {
        Err(DmaeError::Config(_)) => Ok(()),
        Err(e) => Err(format!("expected a config error, got {e}")),
        Ok(_) => Err("mismatched dataset accepted".into()),
    }
}
