import plotly.express as px
import streamlit as st

from utils.export import export_to_excel, export_to_markdown


def display_report(report):
    """Show the FDE table, a bar chart per method and horizon, and download buttons"""
    if report is None or not report.cells:
        return

    df = report.to_frame()
    display_df = df.rename(columns=st.session_state.get('column_mapping', {}))

    with st.container():
        st.subheader("Final displacement error")
        st.dataframe(display_df, use_container_width=True)

    fig = px.bar(
        df,
        x='horizon',
        y='fde_mean_px',
        error_y='fde_std_px',
        color='method',
        facet_col='split',
        barmode='group',
        labels={'horizon': 'Horizon (frames)', 'fde_mean_px': 'FDE (px)', 'method': 'Method'},
    )
    st.plotly_chart(fig, use_container_width=True)

    with st.expander("Table layout"):
        st.markdown(export_to_markdown(report))

    try:
        excel_data = export_to_excel(report)
        st.download_button(
            "Download Excel",
            data=excel_data,
            file_name="fde_report.xlsx",
            mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
        )
    except Exception as e:
        st.error(f"Error preparing Excel export: {e}")
