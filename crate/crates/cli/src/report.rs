use std::io::Write;

use sigpower_core::{AllocationResult, SweepRow};

const SIGNIFICANT: usize = 12;

/// `%.12g`: 12 significant digits, trailing zeros dropped, exponent form
/// outside `[1e-4, 1e12)`.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", SIGNIFICANT - 1, x);
    let (mantissa, exponent) = sci.split_once('e').expect("exponent present");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if exponent < -4 || exponent >= SIGNIFICANT as i32 {
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exponent.abs())
    } else {
        let decimals = (SIGNIFICANT as i32 - 1 - exponent).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn numbered(prefix: &str, m: usize) -> impl Iterator<Item = String> + '_ {
    (1..=m).map(move |i| format!("{prefix}{i}"))
}

fn floats(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| format_float(*v))
}

pub fn write_trace(out: impl Write, result: &AllocationResult, users: usize) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let header = ["n", "price", "max_bid_step"]
        .into_iter()
        .map(String::from)
        .chain(numbered("w_", users))
        .chain(numbered("P_", users));
    writer.write_record(header)?;
    for t in &result.trace {
        let fields = [t.n.to_string(), format_float(t.price), format_float(t.max_bid_step)]
            .into_iter()
            .chain(floats(&t.bids))
            .chain(floats(&t.powers));
        writer.write_record(fields)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_sweep(out: impl Write, rows: &[SweepRow], users: usize) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let header = ["P_T", "p", "sum_P"]
        .into_iter()
        .map(String::from)
        .chain(numbered("P_", users))
        .chain(numbered("w_", users))
        .chain(numbered("oracle_P_", users));
    writer.write_record(header)?;
    for r in rows {
        let fields = [format_float(r.total_power), format_float(r.price), format_float(r.sum_power)]
            .into_iter()
            .chain(floats(&r.powers))
            .chain(floats(&r.bids))
            .chain(floats(&r.oracle_powers));
        writer.write_record(fields)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::format_float;

    #[test]
    fn matches_printf_g12() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (100.0, "100"),
            (0.5, "0.5"),
            (0.1 + 0.2, "0.3"),
            (2.0 / 3.0, "0.666666666667"),
            (123456.789, "123456.789"),
            (0.995852, "0.995852"),
            (1e-5, "1e-05"),
            (0.000123456789012345, "0.000123456789012"),
            (4.753e-6, "4.753e-06"),
            (1e12, "1e+12"),
            (999999999999.4, "999999999999"),
            (-2.5, "-2.5"),
            (9.9999999999996, "10"),
        ];
        for (x, want) in cases {
            assert_eq!(format_float(x), want, "{x:e}");
        }
    }
}
