//! Serde adapters storing `Vec<[f64; N]>` as one flat list.

use serde::{de::Error, Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer, const N: usize>(rows: &[[f64; N]], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(rows.iter().flatten())
}

pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<Vec<[f64; N]>, D::Error> {
    let flat = Vec::<f64>::deserialize(d)?;
    if flat.len() % N != 0 {
        return Err(D::Error::custom(format!("flat array length {} is not a multiple of {N}", flat.len())));
    }
    Ok(flat
        .chunks_exact(N)
        .map(|c| std::array::from_fn(|i| c[i]))
        .collect())
}

/// Row-major 3x3 matrix as nine numbers.
pub mod mat3 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &[[f64; 3]; 3], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().flatten())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[[f64; 3]; 3], D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() != 9 {
            return Err(D::Error::custom(format!("expected 9 numbers, got {}", flat.len())));
        }
        Ok(std::array::from_fn(|r| std::array::from_fn(|c| flat[3 * r + c])))
    }
}
