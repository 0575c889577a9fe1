//! Pre-registered seeds for every calibration and power claim.
//!
//! Entry `i` is `mix64(i)`. The list is frozen here so that statistical
//! acceptance runs are deterministic regression tests.

use crate::rng::Seed;

pub const PREREGISTERED_SEEDS: [u64; 100] = [
    0xE220A8397B1DCDAF, 0x910A2DEC89025CC1, 0x975835DE1C9756CE, 0x1D0B14E4DB018FED,
    0x6E73E372E2338ACA, 0x63033B0CA389C35A, 0xBD64A5D9ADEFE000, 0x63CBE1E459320DD7,
    0x9E5651B0EF953636, 0xAEAF52FEBE706064, 0x088712BE8A582FCA, 0x50F5647D2380309D,
    0x943FF9FC99DE8F03, 0xC4CA37B7F8AD8AFF, 0x6AA9D61435DBE63E, 0x875B9307ABF55005,
    0x5DE186DCBA779207, 0x808475F02EE37363, 0x1120B3D00955F032, 0xBC4075F2EF431A44,
    0x362259904816818C, 0x06CA0A95B7E825C7, 0xC80DE0F9D4D60E0A, 0xE8D7DA001B0181D6,
    0xAAC8C00000A81E44, 0xA208C12CF0C7B709, 0xC3B7F4E80F554DDA, 0x974E35325981068A,
    0x905C768AD49F146C, 0xBB7B49AB8801CF70, 0xA8EE577AF2720DCE, 0xD7599677879FEAEA,
    0xEAEB7F27B54E2401, 0x2C0E0FEDBE2218A8, 0x89242D2DD9D4A40D, 0x4D5CB825DFAAB05B,
    0xE9B316290724BA1B, 0xC7AB56057C8DA907, 0xEB01CFAF16B47EB0, 0xCE6A57A6E3CCDEEC,
    0x369EAE0B0CA19112, 0x118E846EA93BC949, 0xBDD732262FEB6E95, 0xBA69EC90EB4FEF88,
    0xFB452912299A5453, 0xF7E9F3F88CC04AD6, 0xBAEE56F32E223007, 0x7BB3C45C597CDB85,
    0x040A2076F607FF23, 0x1C4A97A6EDC2A958, 0xBB0802C412D354CB, 0x5DDAD83B4E874068,
    0xF9B44ECD07B4404A, 0xC85E84F460206F76, 0xBC46B610E9D3F375, 0x6E1351B2349F331C,
    0x9D189ECFFF7B2147, 0x36057413850F2A31, 0x7DAF7BD7B0085FD2, 0x9691C38B30D2B83C,
    0xBB0AF0F391997767, 0x417FFD1301EAA631, 0x322F69AFA8A70BEA, 0x8C741196ACC47E35,
    0xD6967248FBE68CC3, 0x3706970B052F16B1, 0x2C1C719D2C17B759, 0xE5AEAA7575AD84C4,
    0x051C9D6DBC0A79CA, 0x5351EBFC8B302867, 0x6707E8333343CB0F, 0xD0B1B125E467DAAF,
    0x8E64BFA85C308C9A, 0xD08F003850439A4B, 0x49F64E7A9B76929B, 0x8B425770EDF587A4,
    0xE5F50758D870DBB2, 0x6258CBE07C1FF081, 0x5709BA31DFE2649C, 0x8795CC503EDA4F23,
    0xBD9E8145F2FA917B, 0x9192105C8367CCF5, 0x0DE7F33488454A0C, 0x0981D32AE0DFF915,
    0xCF64624732260342, 0x6E159AE8300518F8, 0xD34711B5DBAAC9B5, 0xF4C4962E561469C2,
    0x3D9B64451AF7F223, 0xD0F8252577628D86, 0xEF96E022E649CEC6, 0xF85507DA4C69F9D2,
    0x9D589011DCD0F76F, 0xFB43E48309CA2DB7, 0xF5D716B2F98BF127, 0xFB761138E1E0A78C,
    0x6232969000262121, 0x4F5DA978776A9DB1, 0xF0EEA8C8A0607D15, 0x42F3A9364C476BE3,
];

pub fn preregistered(count: usize) -> Vec<Seed> {
    PREREGISTERED_SEEDS.iter().take(count).map(|&s| Seed(s)).collect()
}

/// Seeds `mix64(0) .. mix64(count - 1)`, for any count.
pub fn expand_seed_count(count: usize) -> Vec<Seed> {
    (0..count as u64).map(|i| Seed(crate::rng::mix64(i))).collect()
}
