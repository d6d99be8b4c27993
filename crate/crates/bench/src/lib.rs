//! Fixtures shared by the solver benchmarks.

use cellfree::{NetworkStats, QuantizerSpec, SinrContext, SystemConfig};

/// Drop `index` of the desk profile with its quantized Case 2 context.
pub fn desk_context(index: u64) -> (SystemConfig, SinrContext) {
    let config = SystemConfig::profile("desk").expect("desk profile");
    let stats = NetworkStats::generate(&config, index).expect("desk drop");
    let alpha = config.alpha.unwrap_or(config.alpha_max);
    let model = QuantizerSpec::for_bits(alpha).expect("quantizer").linear_model();
    let context = SinrContext::new(&stats, model, config.case);
    (config, context)
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixture_builds() {
        let (config, context) = super::desk_context(0);
        assert_eq!(context.users(), config.k);
        assert_eq!(context.aps(), config.m);
    }
}
