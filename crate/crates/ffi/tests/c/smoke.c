#include <stdio.h>
#include <stdlib.h>

#include "chiplet_meanfield.h"

static int fail(const char *what, CmStatus s) {
    const char *msg = cm_last_error_message();
    fprintf(stderr, "%s: status %d: %s\n", what, (int)s, msg ? msg : "(none)");
    return 1;
}

int main(void) {
    CmCapacitance *cc = NULL, *ce = NULL;
    CmStatus s = cm_capacitance_sample(7, 3, 0.01, &cc, &ce);
    if (s != CM_STATUS_OK) return fail("sample", s);
    double v = 0.0;
    s = cm_capacitance_value(cc, 0.5, &v);
    if (s != CM_STATUS_OK || !(v > 0.0)) return fail("value", s);
    s = cm_capacitance_value(cc, -1.0, &v);
    if (s == CM_STATUS_OK) return fail("negative radius accepted", s);
    cm_capacitance_free(cc);
    cm_capacitance_free(ce);

    double a[] = {0.0, 0.0}, wa[] = {1.0};
    double b[] = {3.0, 4.0}, wb[] = {1.0};
    double w = 0.0;
    s = cm_exact_w2(a, wa, 1, b, wb, 1, &w);
    if (s != CM_STATUS_OK || w < 4.999999 || w > 5.000001) return fail("exact_w2", s);

    CmFlow *flow = NULL;
    s = cm_flow_new("{\"flow\": {\"steps\": 3}}", &flow);
    if (s != CM_STATUS_OK) return fail("flow_new", s);
    double e0 = 0.0, e1 = 0.0;
    cm_flow_energy(flow, &e0);
    s = cm_flow_step(flow, 3);
    if (s != CM_STATUS_OK) return fail("flow_step", s);
    cm_flow_energy(flow, &e1);
    size_t nx = 0, ny = 0;
    cm_flow_grid_shape(flow, &nx, &ny);
    double *buf = malloc(nx * ny * sizeof(double));
    s = cm_flow_density(flow, buf, nx * ny);
    if (s != CM_STATUS_OK) return fail("flow_density", s);
    free(buf);
    cm_flow_free(flow);
    if (!(e1 <= e0)) return fail("energy rose", CM_STATUS_OK);
    printf("ok %s\n", cm_version());
    return 0;
}
