"""
Local Landmarking Results Streamlit App
Browses sweep records and verification reports stored in the local DuckDB
"""

import sys
from pathlib import Path

import plotly.graph_objects as go
import streamlit as st

# Add src directory to path
sys.path.append(str(Path(__file__).parent.parent / 'src'))

from experiment_config import default_data_dir
from grouping import DomainError, GroupingProfile, phase_crossing
from results_db import LandmarkDB
from sweep_summary import h_profile_frame, summarize

DB_PATH = default_data_dir() / 'landmarks.duckdb'

st.set_page_config(layout="wide", page_title="📐 Landmark-resultater")


@st.cache_data(ttl=30)  # Cache for 30 seconds
def get_records():
    """All sweep records from the local database."""
    db = LandmarkDB(str(DB_PATH))
    try:
        return db.get_records()
    finally:
        db.close()


@st.cache_data(ttl=30)
def get_latest_reports():
    db = LandmarkDB(str(DB_PATH))
    try:
        return db.latest_reports()
    finally:
        db.close()


try:
    records = get_records()
    reports = get_latest_reports()
except Exception as e:
    st.error(f"Fejl ved indlæsning af data: {e}")
    st.stop()

st.title("📐 Landmark-resultater")

# ======== FILTER SEKTION ========
st.sidebar.title("🔍 **Filtrer kørsler**")

if records.empty:
    st.warning("Ingen sweep-data endnu. Kør fx `python start.py sweep configs/scaling_in_D.toml --db data/landmarks.duckdb`")
    filtered = records
else:
    sweeps = sorted(records['sweep_name'].unique())
    selected_sweep = st.sidebar.selectbox("Sweep", sweeps)
    filtered = records[records['sweep_name'] == selected_sweep]

    kinds = sorted(filtered['kind'].dropna().unique())
    selected_kinds = st.sidebar.multiselect("Mangfoldighed", kinds, default=kinds)
    dims = sorted(int(v) for v in filtered['ambient_dim'].dropna().unique())
    selected_dims = st.sidebar.multiselect("Omgivende dimension D", dims, default=dims)
    sigmas = sorted(float(v) for v in filtered['sigma'].dropna().unique())
    selected_sigmas = st.sidebar.multiselect("Støjniveau σ", sigmas, default=sigmas, format_func=lambda v: f"{v:.4g}")

    # Only filter on axes where something is selected
    if selected_kinds:
        filtered = filtered[filtered['kind'].isin(selected_kinds)]
    if selected_dims:
        filtered = filtered[filtered['ambient_dim'].isin(selected_dims)]
    if selected_sigmas:
        filtered = filtered[filtered['sigma'].isin(selected_sigmas)]

# ======== NØGLETAL SEKTION ========
if not filtered.empty:
    st.markdown("### 📊 **Nøgletal**")
    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("Antal kørsler", len(filtered))
    with col2:
        st.metric("Fejlede kørsler", int(filtered['error'].notna().sum()))
    with col3:
        st.metric("Median d(q², M)", f"{filtered['dist_q2'].median():.4g}")
    with col4:
        st.metric("Median forhold til teoriskala", f"{filtered['ratio'].median():.3g}")

    summary = summarize(filtered)

    st.subheader("📋 Opsummering pr. parametersæt")
    summary_columns = [
        'tuple_index', 'kind', 'intrinsic_dim', 'ambient_dim', 'sigma', 'runs', 'errors',
        'dist_q0_median', 'dist_q1_median', 'dist_q2_median', 'dist_q2_iqr', 'ratio_median',
        'monotone_in_sigma', 'monotone_in_D', 'ratio_spread_across_D',
    ]
    st.dataframe(
        data=summary[summary_columns],
        use_container_width=True,
        hide_index=True,
        column_config={
            "tuple_index": st.column_config.NumberColumn("Sæt", format="%d"),
            "kind": st.column_config.TextColumn("Mangfoldighed"),
            "intrinsic_dim": st.column_config.NumberColumn("d", format="%d"),
            "ambient_dim": st.column_config.NumberColumn("D", format="%d"),
            "sigma": st.column_config.NumberColumn("σ", format="%.4g"),
            "runs": st.column_config.NumberColumn("Kørsler", format="%d"),
            "errors": st.column_config.NumberColumn("Fejl", format="%d"),
            "dist_q0_median": st.column_config.NumberColumn("d(q⁰,M)", format="%.4g"),
            "dist_q1_median": st.column_config.NumberColumn("d(q¹,M)", format="%.4g"),
            "dist_q2_median": st.column_config.NumberColumn("d(q²,M)", format="%.4g"),
            "dist_q2_iqr": st.column_config.NumberColumn("IQR d(q²,M)", format="%.3g"),
            "ratio_median": st.column_config.NumberColumn(
                "Forhold",
                format="%.3g",
                help="💡 d(q²,M) divideret med σ√(d(1 + κ·diam/log D))",
            ),
            "monotone_in_sigma": st.column_config.CheckboxColumn("Monoton i σ"),
            "monotone_in_D": st.column_config.CheckboxColumn("Monoton i D"),
            "ratio_spread_across_D": st.column_config.NumberColumn("Spredning over D", format="%.3g"),
        },
    )

    st.subheader("📉 Afstand til M pr. trin")
    fig = go.Figure()
    for _, row in summary.iterrows():
        fig.add_trace(go.Scatter(
            x=['q⁰', 'q¹', 'q²'],
            y=[row['dist_q0_median'], row['dist_q1_median'], row['dist_q2_median']],
            mode='lines+markers',
            name=f"{row['kind']} D={row['ambient_dim']} σ={row['sigma']:.3g}",
        ))
    fig.update_layout(yaxis_title='median d(q, M)', xaxis_title='trin', yaxis_type='log')
    st.plotly_chart(fig, use_container_width=True)

# ======== GRUPPERINGSPROFIL ========
st.subheader("🎯 Grupperingssandsynlighed h(s)")
col1, col2, col3 = st.columns(3)
with col1:
    profile_D = st.number_input("D", min_value=4, max_value=100000, value=128, step=1)
with col2:
    profile_sigma = st.number_input("σ", min_value=1e-6, max_value=10.0, value=0.1, format="%.4f")
with col3:
    profile_R_sq = st.number_input("R²", min_value=1e-6, max_value=1e6, value=3.84, format="%.4f")

try:
    profile = GroupingProfile.from_radius_sq(profile_R_sq, profile_sigma, int(profile_D))
    frame = h_profile_frame(profile)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=frame['s'], y=frame['h'], mode='lines', name='h(s)'))
    fig.add_trace(go.Scatter(x=frame['s'], y=frame['neg_h_dot'], mode='lines', name="-h'(s)", yaxis='y2'))
    fig.add_vline(x=profile.s_star, line_dash='dash', annotation_text='s*')
    fig.update_layout(
        xaxis_title='s',
        yaxis=dict(title='h(s)', range=[0, 1.05]),
        yaxis2=dict(title="-h'(s)", overlaying='y', side='right'),
    )
    st.plotly_chart(fig, use_container_width=True)
    st.caption(
        f"s* = {profile.s_star:.4f}, ν̄ = {profile.nu_bar:.4f}, h krydser 0.5 ved s = {phase_crossing(profile):.4f}"
    )
except DomainError as e:
    st.info(f"Parametrene giver ingen faseovergang: {e}")

# ======== VERIFIKATION ========
st.subheader("✅ Seneste verifikationskørsler")
if reports.empty:
    st.info("Ingen verifikationsrapporter endnu. Kør `python start.py verify --check all --db data/landmarks.duckdb`")
else:
    counts = reports['outcome'].value_counts()
    cols = st.columns(4)
    for col, outcome in zip(cols, ['PASS', 'INCONCLUSIVE', 'SKIPPED', 'FAIL']):
        with col:
            st.metric(outcome, int(counts.get(outcome, 0)))
    st.dataframe(
        data=reports[['check_name', 'outcome', 'samples', 'runtime', 'message', 'recorded_at_utc']],
        use_container_width=True,
        hide_index=True,
        column_config={
            "check_name": st.column_config.TextColumn("Check", width="medium"),
            "outcome": st.column_config.TextColumn("Resultat"),
            "samples": st.column_config.NumberColumn("Stikprøver", format="%d"),
            "runtime": st.column_config.NumberColumn("Tid (s)", format="%.2f"),
            "message": st.column_config.TextColumn("Besked", width="large"),
            "recorded_at_utc": st.column_config.DatetimeColumn("Kørt (UTC)"),
        },
    )

# Add refresh data button
if st.sidebar.button("🔄 Genindlæs data"):
    st.cache_data.clear()
    st.rerun()

if not records.empty:
    st.sidebar.info(f"{len(records)} kørsler i {records['sweep_name'].nunique()} sweeps")
