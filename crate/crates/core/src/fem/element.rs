/// 8x8 stiffness of a rectangular bilinear plane-stress element of unit
/// thickness, dof order `(u0x, u0y, u1x, u1y, u2x, u2y, u3x, u3y)` with nodes
/// counter-clockwise from the lower-left corner.
pub fn plane_stress_quad(e: f64, nu: f64, hx: f64, hy: f64) -> [[f64; 8]; 8] {
    let c = e / (1.0 - nu * nu);
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]];
    let g = 1.0 / 3f64.sqrt();
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let det_j = hx * hy / 4.0;

    let mut k = [[0.0; 8]; 8];
    for &(xi, eta) in &[(-g, -g), (g, -g), (g, g), (-g, g)] {
        // shape function derivatives in physical coordinates
        let mut dndx = [0.0; 4];
        let mut dndy = [0.0; 4];
        for (a, &(xa, ya)) in corners.iter().enumerate() {
            dndx[a] = xa * (1.0 + ya * eta) / 4.0 * 2.0 / hx;
            dndy[a] = ya * (1.0 + xa * xi) / 4.0 * 2.0 / hy;
        }
        let mut b = [[0.0; 8]; 3];
        for a in 0..4 {
            b[0][2 * a] = dndx[a];
            b[1][2 * a + 1] = dndy[a];
            b[2][2 * a] = dndy[a];
            b[2][2 * a + 1] = dndx[a];
        }
        let mut db = [[0.0; 8]; 3];
        for r in 0..3 {
            for col in 0..8 {
                db[r][col] = (0..3).map(|m| d[r][m] * b[m][col]).sum();
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                k[i][j] += det_j * (0..3).map(|m| b[m][i] * db[m][j]).sum::<f64>();
            }
        }
    }
    k
}
