#include <stdio.h>
#include "wncs.h"

int main(void) {
    const double v[16] = {
        0.10, 0.10, 0.10, 0.70,
        0.30, 0.20, 0.10, 0.40,
        0.60, 0.20, 0.10, 0.10,
        0.90, 0.05, 0.02, 0.03,
    };
    const size_t s0[2] = {0, 1};
    WncsReport *report = NULL;
    WncsStatus st = wncs_certify_matrix(v, 4, s0, 2, 0.8, 0.8,
                                        WNCS_U_FORM_STATIONARY_WEIGHTED, &report);
    if (st != WNCS_STATUS_OK) {
        char msg[256];
        wncs_last_error_message(msg, sizeof msg);
        fprintf(stderr, "certify failed: %s\n", msg);
        return 1;
    }
    WncsCertificate c;
    wncs_report_certificate(report, &c);
    printf("omega_prime=%.4f omega=%.4f\n", c.omega_prime, c.omega);
    wncs_report_free(report);

    st = wncs_certify_matrix(v, 4, s0, 2, 1.5, 0.8,
                             WNCS_U_FORM_STATIONARY_WEIGHTED, &report);
    printf("bad_rho_status=%d\n", (int)st);
    return 0;
}
