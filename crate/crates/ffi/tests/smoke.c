#include <stdio.h>
#include "barrier_ext.h"

int main(void) {
    double v = 0.0;
    if (bx_psi_ext(-2.0, 1.0, &v) != BX_STATUS_OK) return 1;
    BxSchedule *s = NULL;
    if (bx_schedule_new(5.0, 1.1, &s) != BX_STATUS_OK) return 1;
    bx_schedule_step(s);
    bx_schedule_t(s, &v);
    bx_schedule_free(s);

    BxQp *qp = NULL;
    BxCertificate cert;
    if (bx_qp_random(0, 0, &qp) != BX_STATUS_OK) return 1;
    if (bx_certify_prop2(qp, NULL, 50.0, 1e-6, &cert, NULL) != BX_STATUS_OK) {
        char msg[256];
        bx_last_error_message(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 1;
    }
    bx_qp_free(qp);
    printf("gap %.6g <= %.6g: %s\n", cert.gap, cert.bound, cert.passed ? "ok" : "fail");
    return cert.passed ? 0 : 2;
}
